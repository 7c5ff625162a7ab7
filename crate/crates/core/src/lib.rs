//! Substructure-aware drug-drug interaction prediction: SMILES parsing,
//! a small dense autodiff engine, GNN encoders, the substructure
//! extraction/interaction/dropping model, ECFP fingerprints, and the
//! dataset/split/metrics machinery.

pub mod chem;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod fingerprint;
pub mod gnn;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

//! Checkpoint file: a length-prefixed JSON header (format version, model
//! config, seed, DDI type names, parameter descriptors) followed by every
//! parameter tensor as raw little-endian f64, in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::params::ParamSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamDesc {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    seed: u64,
    type_names: Vec<String>,
    params: Vec<ParamDesc>,
}

pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamSet,
    pub seed: u64,
    pub type_names: Vec<String>,
}

pub fn save(
    path: &Path,
    model: &ModelConfig,
    params: &ParamSet,
    seed: u64,
    type_names: &[String],
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let header = Header {
        version: FORMAT_VERSION,
        model: model.clone(),
        seed,
        type_names: type_names.to_vec(),
        params: params
            .iter()
            .map(|p| ParamDesc { name: p.name.clone(), rows: p.rows, cols: p.cols })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
    f.write_all(&header_bytes).map_err(io_err)?;
    for p in params.iter() {
        for v in &p.data {
            f.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let pstr = path.display().to_string();
    let io_err = |source| CheckpointError::Io { path: pstr.clone(), source };
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: pstr.clone(),
        reason: reason.to_string(),
    };
    let mut f = std::fs::File::open(path).map_err(io_err)?;
    let mut len_buf = [0u8; 8];
    f.read_exact(&mut len_buf).map_err(io_err)?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    let file_len = f.metadata().map_err(io_err)?.len() as usize;
    if header_len + 8 > file_len {
        return Err(corrupt("header length exceeds file size"));
    }
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| corrupt(&e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    let mut params = ParamSet::new();
    for desc in &header.params {
        let mut data = vec![0.0f64; desc.rows * desc.cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            f.read_exact(&mut buf)
                .map_err(|_| corrupt("truncated parameter data"))?;
            *v = f64::from_le_bytes(buf);
        }
        params.add(desc.name.clone(), desc.rows, desc.cols, data);
    }
    Ok(Checkpoint {
        model: header.model,
        params,
        seed: header.seed,
        type_names: header.type_names,
    })
}

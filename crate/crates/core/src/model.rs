//! Substructure extraction (SE), substructure interaction (SI), substructure
//! dropping (SD), readout, and the prediction head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chem::MolecularGraph;
use crate::gnn::{self, GnnConfig};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::{sigmoid_scalar, Tensor, TensorError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gnn: GnnConfig,
    /// Number of learnable substructure patterns (M).
    pub patterns: usize,
    /// Number of DDI types (T).
    pub num_types: usize,
    /// Input one-hot feature width (F).
    pub feat_dim: usize,
    /// When false, the SE/SI modules (and SD, which depends on SE's
    /// assignments) are bypassed and the head sees only the two readouts.
    pub use_se_si: bool,
}

impl ModelConfig {
    pub fn mlp_input_width(&self) -> usize {
        let base = 2 * self.gnn.dim + self.num_types;
        if self.use_se_si {
            base + self.patterns * self.patterns
        } else {
            base
        }
    }
}

/// Register every learnable weight: encoder, pattern bank, SE projections,
/// and the prediction MLP.
pub fn init_model_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ParamSet {
    let mut params = ParamSet::new();
    gnn::init_gnn_params(&cfg.gnn, cfg.feat_dim, &mut params, rng);
    let d = cfg.gnn.dim;
    if cfg.use_se_si {
        params.add_glorot("q0", cfg.patterns, d, rng);
        params.add_glorot("w_q", d, d, rng);
        params.add_glorot("w_k", d, d, rng);
        params.add_glorot("w_v", d, d, rng);
        params.add_glorot("w_o", d, d, rng);
    }
    let hidden = 2 * d;
    params.add_glorot("mlp.w1", cfg.mlp_input_width(), hidden, rng);
    params.add_zeros("mlp.b1", 1, hidden);
    params.add_glorot("mlp.w2", hidden, 1, rng);
    params.add_zeros("mlp.b2", 1, 1);
    params
}

/// SE module output: M representative vectors and the M x N attention matrix.
pub struct SeOutput {
    pub reps: Tensor,
    pub attn: Tensor,
}

/// Q = Q0 Wq, K = H Wk, V = H Wv; A = softmax(QK^T / sqrt(d)) over atoms;
/// O = ReLU((Q + AV) Wo).
pub fn se_extract(h: &Tensor, p: &BoundParams) -> Result<SeOutput, TensorError> {
    let d = h.cols() as f64;
    let q = p.get("q0").matmul(p.get("w_q"))?;
    let k = h.matmul(p.get("w_k"))?;
    let v = h.matmul(p.get("w_v"))?;
    let attn = q.matmul(&k.transpose())?.scale(1.0 / d.sqrt()).row_softmax();
    let reps = q.add(&attn.matmul(&v)?)?.matmul(p.get("w_o"))?.relu();
    Ok(SeOutput { reps, attn })
}

/// Per-atom argmax over patterns; ties go to the lowest pattern index.
pub fn assign_atoms(attn: &Tensor) -> Vec<usize> {
    let (m, n) = attn.shape();
    (0..n)
        .map(|j| {
            let mut best = 0;
            for i in 1..m {
                if attn.get(i, j) > attn.get(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Zero the feature rows of one uniformly chosen substructure; edges, labels,
/// and node count are untouched. Returns the augmented graph and the chosen
/// pattern index.
pub fn sd_augment(
    graph: &MolecularGraph,
    assignment: &[usize],
    rng: &mut impl Rng,
) -> (MolecularGraph, usize) {
    assert_eq!(assignment.len(), graph.num_atoms());
    let mut owners: Vec<usize> = assignment.to_vec();
    owners.sort_unstable();
    owners.dedup();
    let chosen = owners[rng.gen_range(0..owners.len())];
    let mut out = graph.clone();
    let f = crate::chem::FEATURE_DIM;
    for (atom, &pat) in assignment.iter().enumerate() {
        if pat == chosen {
            out.node_features[atom * f..(atom + 1) * f].fill(0.0);
        }
    }
    (out, chosen)
}

/// M x M matrix of cosine similarities between the two drugs' representative
/// vectors; rows with zero norm contribute 0.
pub fn si_similarity(o1: &Tensor, o2: &Tensor) -> Result<Tensor, TensorError> {
    o1.row_l2_normalize().matmul(&o2.row_l2_normalize().transpose())
}

/// Summation readout: column sums of the node matrix.
pub fn readout(h: &Tensor) -> Tensor {
    h.sum_rows()
}

fn one_hot_type(t: usize, num_types: usize) -> Tensor {
    assert!(t < num_types, "DDI type {t} out of range (T = {num_types})");
    let mut v = vec![0.0; num_types];
    v[t] = 1.0;
    Tensor::from_vec(1, num_types, v)
}

fn mlp_head(input: &Tensor, p: &BoundParams) -> Result<Tensor, TensorError> {
    input
        .matmul(p.get("mlp.w1"))?
        .add_row_broadcast(p.get("mlp.b1"))?
        .relu()
        .matmul(p.get("mlp.w2"))?
        .add_row_broadcast(p.get("mlp.b2"))
}

/// y = MLP([g1 || g2 || flatten(S) || t]); flatten is row-major.
pub fn predict_logit(
    g1: &Tensor,
    g2: &Tensor,
    s: &Tensor,
    t: usize,
    num_types: usize,
    p: &BoundParams,
) -> Result<Tensor, TensorError> {
    let s_flat = s.reshape(1, s.rows() * s.cols())?;
    let t_vec = one_hot_type(t, num_types);
    let input = Tensor::concat_cols(&[g1, g2, &s_flat, &t_vec])?;
    mlp_head(&input, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { augment: bool },
    Eval,
}

/// One full forward pass on a drug pair, returning the scalar logit (1 x 1).
///
/// In train mode each graph is independently replaced, with probability 0.5,
/// by an SD-augmented version whose substructure assignment comes from a
/// gradient-free pass with the current weights. `p` carries the (tracked)
/// weights for the main pass; `params` backs the gradient-free pass.
pub fn forward_pair(
    d1: &MolecularGraph,
    d2: &MolecularGraph,
    t: usize,
    cfg: &ModelConfig,
    params: &ParamSet,
    p: &BoundParams,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Tensor, TensorError> {
    let augmented: Vec<MolecularGraph>;
    let (d1, d2) = match mode {
        Mode::Train { augment: true } if cfg.use_se_si => {
            let mut graphs = Vec::with_capacity(2);
            let pc = params.bind_const();
            for g in [d1, d2] {
                if rng.gen_bool(0.5) {
                    let h = gnn::encode(&g.features_tensor(), &g.edges, &cfg.gnn, &pc)?;
                    let se = se_extract(&h, &pc)?;
                    let assignment = assign_atoms(&se.attn);
                    graphs.push(sd_augment(g, &assignment, rng).0);
                } else {
                    graphs.push(g.clone());
                }
            }
            augmented = graphs;
            (&augmented[0], &augmented[1])
        }
        _ => (d1, d2),
    };

    let h1 = gnn::encode(&d1.features_tensor(), &d1.edges, &cfg.gnn, p)?;
    let h2 = gnn::encode(&d2.features_tensor(), &d2.edges, &cfg.gnn, p)?;
    let g1 = readout(&h1);
    let g2 = readout(&h2);
    if cfg.use_se_si {
        let se1 = se_extract(&h1, p)?;
        let se2 = se_extract(&h2, p)?;
        let s = si_similarity(&se1.reps, &se2.reps)?;
        predict_logit(&g1, &g2, &s, t, cfg.num_types, p)
    } else {
        let t_vec = one_hot_type(t, cfg.num_types);
        let input = Tensor::concat_cols(&[&g1, &g2, &t_vec])?;
        mlp_head(&input, p)
    }
}

/// One interaction row of the explanation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionRow {
    pub rank: usize,
    pub pattern_drug1: usize,
    pub pattern_drug2: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub probability: f64,
    pub assignment_drug1: Vec<usize>,
    pub assignment_drug2: Vec<usize>,
    /// Full M x M cosine similarity matrix, row-major.
    pub similarity: Vec<Vec<f64>>,
    pub top_interactions: Vec<InteractionRow>,
}

/// Probability, atom assignments, similarity matrix, and the top-k interaction
/// table (sorted by score descending, ties by (i, j) ascending).
pub fn explain_pair(
    d1: &MolecularGraph,
    d2: &MolecularGraph,
    t: usize,
    cfg: &ModelConfig,
    params: &ParamSet,
    top_k: usize,
) -> Result<Explanation, TensorError> {
    assert!(cfg.use_se_si, "explain requires the SE/SI modules");
    let p = params.bind_const();
    let h1 = gnn::encode(&d1.features_tensor(), &d1.edges, &cfg.gnn, &p)?;
    let h2 = gnn::encode(&d2.features_tensor(), &d2.edges, &cfg.gnn, &p)?;
    let se1 = se_extract(&h1, &p)?;
    let se2 = se_extract(&h2, &p)?;
    let s = si_similarity(&se1.reps, &se2.reps)?;
    let logit = predict_logit(&readout(&h1), &readout(&h2), &s, t, cfg.num_types, &p)?;

    let m = cfg.patterns;
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            entries.push((i, j, s.get(i, j)));
        }
    }
    entries.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let top_interactions = entries
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(idx, &(i, j, score))| InteractionRow {
            rank: idx + 1,
            pattern_drug1: i,
            pattern_drug2: j,
            score,
        })
        .collect();

    Ok(Explanation {
        probability: sigmoid_scalar(logit.item()),
        assignment_drug1: assign_atoms(&se1.attn),
        assignment_drug2: assign_atoms(&se2.attn),
        similarity: (0..m)
            .map(|i| (0..m).map(|j| s.get(i, j)).collect())
            .collect(),
        top_interactions,
    })
}

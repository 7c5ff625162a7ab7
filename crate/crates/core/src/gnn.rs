//! Message-passing encoders: GCN, GAT, and GIN over dense adjacency.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{BoundParams, ParamSet};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Gat,
    Gin,
}

impl std::str::FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Backbone::Gcn),
            "gat" => Ok(Backbone::Gat),
            "gin" => Ok(Backbone::Gin),
            other => Err(format!("unknown backbone {other:?} (expected gcn|gat|gin)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            backbone: Backbone::Gin,
            layers: 3,
            dim: 64,
            heads: 2,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("gnn.layers must be >= 1".into());
        }
        if self.dim == 0 {
            return Err("gnn.dim must be > 0".into());
        }
        if self.heads == 0 {
            return Err("gnn.heads must be >= 1".into());
        }
        if self.backbone == Backbone::Gat && self.dim % self.heads != 0 {
            return Err(format!(
                "gnn.dim ({}) must be divisible by gnn.heads ({})",
                self.dim, self.heads
            ));
        }
        Ok(())
    }
}

const LEAKY_RELU_SLOPE: f64 = 0.2;

/// Register all encoder parameters (input projection + per-layer weights).
pub fn init_gnn_params(cfg: &GnnConfig, feat_dim: usize, params: &mut ParamSet, rng: &mut impl Rng) {
    params.add_glorot("in_proj", feat_dim, cfg.dim, rng);
    let d = cfg.dim;
    for l in 0..cfg.layers {
        match cfg.backbone {
            Backbone::Gcn => {
                params.add_glorot(format!("gnn.l{l}.w"), d, d, rng);
            }
            Backbone::Gat => {
                let dh = d / cfg.heads;
                for h in 0..cfg.heads {
                    params.add_glorot(format!("gnn.l{l}.h{h}.w"), d, dh, rng);
                    params.add_glorot(format!("gnn.l{l}.h{h}.a_src"), dh, 1, rng);
                    params.add_glorot(format!("gnn.l{l}.h{h}.a_dst"), dh, 1, rng);
                }
            }
            Backbone::Gin => {
                // learnable eps, initialized to 0
                params.add(format!("gnn.l{l}.eps"), 1, 1, vec![0.0]);
                params.add_glorot(format!("gnn.l{l}.w1"), d, d, rng);
                params.add_zeros(format!("gnn.l{l}.b1"), 1, d);
                params.add_glorot(format!("gnn.l{l}.w2"), d, d, rng);
                params.add_zeros(format!("gnn.l{l}.b2"), 1, d);
            }
        }
    }
}

/// Dense adjacency matrix, optionally with self-loops.
pub fn adjacency(n: usize, edges: &[(usize, usize)], self_loops: bool) -> Tensor {
    let mut a = vec![0.0; n * n];
    for &(i, j) in edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    if self_loops {
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
    }
    Tensor::from_vec(n, n, a)
}

/// Symmetric GCN normalization: D^{-1/2} (A + I) D^{-1/2}.
pub fn gcn_norm_adj(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let a = adjacency(n, edges, true);
    let mut deg = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            deg[i] += a.get(i, j);
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                out[i * n + j] = v / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    Tensor::from_vec(n, n, out)
}

/// ReLU( norm_adj . H . W )
pub fn gcn_layer(h: &Tensor, norm_adj: &Tensor, w: &Tensor) -> Result<Tensor, TensorError> {
    Ok(norm_adj.matmul(h)?.matmul(w)?.relu())
}

/// Multi-head graph attention over neighborhood plus self; heads concatenated,
/// ELU activation. Also returns the per-head attention matrices.
pub fn gat_layer_with_attn(
    h: &Tensor,
    adj_self: &Tensor,
    layer: usize,
    heads: usize,
    p: &BoundParams,
) -> Result<(Tensor, Vec<Tensor>), TensorError> {
    let n = h.rows();
    let ones_row = Tensor::from_vec(1, n, vec![1.0; n]);
    let ones_col = Tensor::from_vec(n, 1, vec![1.0; n]);
    let mut outs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for head in 0..heads {
        let w = p.get(&format!("gnn.l{layer}.h{head}.w"));
        let a_src = p.get(&format!("gnn.l{layer}.h{head}.a_src"));
        let a_dst = p.get(&format!("gnn.l{layer}.h{head}.a_dst"));
        let hw = h.matmul(w)?;
        let src = hw.matmul(a_src)?; // N x 1, score contribution of the center
        let dst = hw.matmul(a_dst)?; // N x 1, contribution of the neighbor
        // e[i][j] = src[i] + dst[j]
        let e = src.matmul(&ones_row)?.add(&ones_col.matmul(&dst.transpose())?)?;
        let attn = e.leaky_relu(LEAKY_RELU_SLOPE).masked_row_softmax(adj_self)?;
        outs.push(attn.matmul(&hw)?);
        attns.push(attn);
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    let out = Tensor::concat_cols(&refs)?.elu();
    Ok((out, attns))
}

pub fn gat_layer(
    h: &Tensor,
    adj_self: &Tensor,
    layer: usize,
    heads: usize,
    p: &BoundParams,
) -> Result<Tensor, TensorError> {
    Ok(gat_layer_with_attn(h, adj_self, layer, heads, p)?.0)
}

/// MLP( (1 + eps) h_v + sum_{u in N(v)} h_u ) with a 2-layer ReLU MLP.
pub fn gin_layer(
    h: &Tensor,
    adj: &Tensor,
    layer: usize,
    p: &BoundParams,
) -> Result<Tensor, TensorError> {
    let eps = p.get(&format!("gnn.l{layer}.eps"));
    let one_plus_eps = Tensor::scalar(1.0).add(eps)?;
    let agg = h.scale_by(&one_plus_eps)?.add(&adj.matmul(h)?)?;
    let w1 = p.get(&format!("gnn.l{layer}.w1"));
    let b1 = p.get(&format!("gnn.l{layer}.b1"));
    let w2 = p.get(&format!("gnn.l{layer}.w2"));
    let b2 = p.get(&format!("gnn.l{layer}.b2"));
    agg.matmul(w1)?
        .add_row_broadcast(b1)?
        .relu()
        .matmul(w2)?
        .add_row_broadcast(b2)
}

/// Run the full encoder stack, returning last-layer node representations (N x d).
pub fn encode(
    features: &Tensor,
    edges: &[(usize, usize)],
    cfg: &GnnConfig,
    p: &BoundParams,
) -> Result<Tensor, TensorError> {
    let n = features.rows();
    let mut h = features.matmul(p.get("in_proj"))?;
    match cfg.backbone {
        Backbone::Gcn => {
            let norm = gcn_norm_adj(n, edges);
            for l in 0..cfg.layers {
                h = gcn_layer(&h, &norm, p.get(&format!("gnn.l{l}.w")))?;
            }
        }
        Backbone::Gat => {
            let adj_self = adjacency(n, edges, true);
            for l in 0..cfg.layers {
                h = gat_layer(&h, &adj_self, l, cfg.heads, p)?;
            }
        }
        Backbone::Gin => {
            let adj = adjacency(n, edges, false);
            for l in 0..cfg.layers {
                h = gin_layer(&h, &adj, l, p)?;
            }
        }
    }
    Ok(h)
}

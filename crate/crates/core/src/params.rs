//! Named parameter storage, tape binding, and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;

use crate::tensor::{Gradients, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// All learnable weights of a model, in a stable order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(data.len(), rows * cols);
        assert!(
            self.entries.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(Param { name, rows, cols, data });
    }

    /// Glorot-uniform initialized matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, rows, cols, data);
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.add(name, rows, cols, vec![0.0; rows * cols]);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    /// Materialize every parameter as a watched leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let mut map = HashMap::new();
        for p in &self.entries {
            let t = Tensor::from_vec(p.rows, p.cols, p.data.clone()).watched(tape);
            map.insert(p.name.clone(), t);
        }
        BoundParams { map }
    }

    /// Materialize parameters as constants (no gradient tracking).
    pub fn bind_const(&self) -> BoundParams {
        let mut map = HashMap::new();
        for p in &self.entries {
            map.insert(p.name.clone(), Tensor::from_vec(p.rows, p.cols, p.data.clone()));
        }
        BoundParams { map }
    }

    /// Collect gradients per parameter; parameters unreached by backward get zeros.
    pub fn gradients(&self, bound: &BoundParams, grads: &Gradients) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .map(|p| {
                let t = &bound.map[&p.name];
                grads
                    .wrt(t)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.data.len()])
            })
            .collect()
    }
}

/// Tape-bound view of a [`ParamSet`] for one forward/backward pass.
pub struct BoundParams {
    map: HashMap<String, Tensor>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }
}

/// Bias-corrected Adam state (beta1=0.9, beta2=0.999, eps=1e-8).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState { m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update over every parameter. `grads` must be ordered like `params`.
pub fn adam_step(params: &mut ParamSet, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) {
    assert_eq!(grads.len(), params.len());
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, p) in params.entries.iter_mut().enumerate() {
        let g = &grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.data.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

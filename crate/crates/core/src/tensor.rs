//! Dense-matrix reverse-mode autodiff.
//!
//! All tensors are row-major `f64` matrices. Operations between tensors that
//! carry a tape node record a backward closure on the tape; constants (no
//! node) participate in forward computation but receive no gradients.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left {left_rows}x{left_cols}, right {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
}

type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64>>;

struct Node {
    /// (parent node id, closure mapping upstream grad -> parent grad contribution)
    parents: Vec<(usize, GradFn)>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Gradient tape. Cloning is cheap (shared handle); a tape is single-threaded.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, parents: Vec<(usize, GradFn)>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { parents });
        inner.nodes.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Gradients of a scalar with respect to every tape node touched by backward.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `t`, if `t` is on the tape and was reached.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let (_, id) = t.node.as_ref()?;
        self.grads.get(*id)?.as_deref()
    }
}

#[derive(Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    node: Option<(Tape, usize)>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Tensor {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Tensor { rows, cols, data, node: None }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::from_vec(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Register this tensor as a leaf (parameter) on `tape`.
    pub fn watched(mut self, tape: &Tape) -> Self {
        let id = tape.push(Vec::new());
        self.node = Some((tape.clone(), id));
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a 1x1 tensor");
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    fn tape_of<'a>(inputs: &[&'a Tensor]) -> Option<&'a Tape> {
        let mut found: Option<&Tape> = None;
        for t in inputs {
            if let Some((tape, _)) = &t.node {
                match found {
                    None => found = Some(tape),
                    Some(f) => assert!(f.same_as(tape), "tensors from different tapes"),
                }
            }
        }
        found
    }

    /// Build the result tensor, recording backward closures for tracked inputs.
    fn record(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        inputs: &[&Tensor],
        grad_fns: Vec<Option<GradFn>>,
    ) -> Tensor {
        debug_assert_eq!(inputs.len(), grad_fns.len());
        let node = Tensor::tape_of(inputs).map(|tape| {
            let mut parents = Vec::new();
            for (t, gf) in inputs.iter().zip(grad_fns) {
                if let (Some((_, id)), Some(gf)) = (&t.node, gf) {
                    parents.push((*id, gf));
                }
            }
            let id = tape.push(parents);
            (tape.clone(), id)
        });
        Tensor { rows, cols, data, node }
    }

    fn shape_err(
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
    ) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != other.rows {
            return Err(Tensor::shape_err("matmul", self, other));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let data = matmul_raw(&self.data, &other.data, m, k, n);
        let a = self.data.clone();
        let b = other.data.clone();
        Tensor::record(
            m,
            n,
            data,
            &[self, other],
            vec![
                Some(Box::new(move |g| {
                    // da = g . b^T
                    let bt = transpose_raw(&b, k, n);
                    matmul_raw(g, &bt, m, n, k)
                })),
                Some(Box::new(move |g| {
                    // db = a^T . g
                    let at = transpose_raw(&a, m, k);
                    matmul_raw(&at, g, k, m, n)
                })),
            ],
        )
        .pipe_ok()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(Tensor::shape_err("add", self, other));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self, other],
            vec![
                Some(Box::new(|g| g.to_vec())),
                Some(Box::new(|g| g.to_vec())),
            ],
        )
        .pipe_ok()
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(Tensor::shape_err("sub", self, other));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self, other],
            vec![
                Some(Box::new(|g| g.to_vec())),
                Some(Box::new(|g| g.iter().map(|x| -x).collect())),
            ],
        )
        .pipe_ok()
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != other.shape() {
            return Err(Tensor::shape_err("mul", self, other));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        let a = self.data.clone();
        let b = other.data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self, other],
            vec![
                Some(Box::new(move |g| g.iter().zip(&b).map(|(g, b)| g * b).collect())),
                Some(Box::new(move |g| g.iter().zip(&a).map(|(g, a)| g * a).collect())),
            ],
        )
        .pipe_ok()
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data.iter().map(|x| x * c).collect();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| g.iter().map(|x| x * c).collect()))],
        )
    }

    /// Multiply every entry of `self` by the 1x1 tensor `s` (gradient flows to both).
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor, TensorError> {
        if s.shape() != (1, 1) {
            return Err(Tensor::shape_err("scale_by", self, s));
        }
        let sv = s.data[0];
        let data = self.data.iter().map(|x| x * sv).collect();
        let x = self.data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self, s],
            vec![
                Some(Box::new(move |g| g.iter().map(|g| g * sv).collect())),
                Some(Box::new(move |g| {
                    vec![g.iter().zip(&x).map(|(g, x)| g * x).sum()]
                })),
            ],
        )
        .pipe_ok()
    }

    /// Add row vector `b` (1 x cols) to every row of `self`.
    pub fn add_row_broadcast(&self, b: &Tensor) -> Result<Tensor, TensorError> {
        if b.rows != 1 || b.cols != self.cols {
            return Err(Tensor::shape_err("add_row_broadcast", self, b));
        }
        let cols = self.cols;
        let rows = self.rows;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + b.data[i % cols])
            .collect();
        Tensor::record(
            rows,
            cols,
            data,
            &[self, b],
            vec![
                Some(Box::new(|g| g.to_vec())),
                Some(Box::new(move |g| {
                    let mut out = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            out[j] += g[i * cols + j];
                        }
                    }
                    out
                })),
            ],
        )
        .pipe_ok()
    }

    pub fn transpose(&self) -> Tensor {
        let (rows, cols) = (self.rows, self.cols);
        let data = transpose_raw(&self.data, rows, cols);
        Tensor::record(
            cols,
            rows,
            data,
            &[self],
            vec![Some(Box::new(move |g| transpose_raw(g, cols, rows)))],
        )
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor, TensorError> {
        if rows * cols != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rows,
                right_cols: cols,
            });
        }
        Tensor::record(
            rows,
            cols,
            self.data.clone(),
            &[self],
            vec![Some(Box::new(|g| g.to_vec()))],
        )
        .pipe_ok()
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data.iter().map(|&x| x.max(0.0)).collect();
        let x = self.data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                // subgradient at 0 is 0
                g.iter()
                    .zip(&x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect()
            }))],
        )
    }

    pub fn leaky_relu(&self, alpha: f64) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { alpha * x })
            .collect();
        let x = self.data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                g.iter()
                    .zip(&x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { alpha * g })
                    .collect()
            }))],
        )
    }

    pub fn elu(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let x = self.data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                g.iter()
                    .zip(&x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { g * x.exp() })
                    .collect()
            }))],
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&x| sigmoid_scalar(x)).collect();
        let y = data.clone();
        Tensor::record(
            self.rows,
            self.cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                g.iter().zip(&y).map(|(g, &y)| g * y * (1.0 - y)).collect()
            }))],
        )
    }

    /// Softmax over each row, with max-subtraction for stability.
    pub fn row_softmax(&self) -> Tensor {
        let mask = Tensor::from_vec(self.rows, self.cols, vec![1.0; self.data.len()]);
        self.masked_row_softmax(&mask).expect("mask shape matches")
    }

    /// Row softmax restricted to entries where `mask` is nonzero; excluded
    /// entries are 0 in the output. `mask` is a constant (no gradient).
    pub fn masked_row_softmax(&self, mask: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() != mask.shape() {
            return Err(Tensor::shape_err("masked_row_softmax", self, mask));
        }
        let (rows, cols) = (self.rows, self.cols);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &self.data[i * cols..(i + 1) * cols];
            let mrow = &mask.data[i * cols..(i + 1) * cols];
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m != 0.0)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut sum = 0.0;
            for j in 0..cols {
                if mrow[j] != 0.0 {
                    let e = (row[j] - max).exp();
                    data[i * cols + j] = e;
                    sum += e;
                }
            }
            for j in 0..cols {
                data[i * cols + j] /= sum;
            }
        }
        let y = data.clone();
        Tensor::record(
            rows,
            cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..cols {
                        out[i * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                out
            }))],
        )
        .pipe_ok()
    }

    /// Column-wise sums: N x d -> 1 x d.
    pub fn sum_rows(&self) -> Tensor {
        let (rows, cols) = (self.rows, self.cols);
        let mut data = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j] += self.data[i * cols + j];
            }
        }
        Tensor::record(
            1,
            cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    out[i * cols..(i + 1) * cols].copy_from_slice(g);
                }
                out
            }))],
        )
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data.iter().sum();
        let len = self.data.len();
        Tensor::record(
            1,
            1,
            vec![total],
            &[self],
            vec![Some(Box::new(move |g| vec![g[0]; len]))],
        )
    }

    /// Normalize each row to unit L2 norm; all-zero rows stay zero.
    pub fn row_l2_normalize(&self) -> Tensor {
        let (rows, cols) = (self.rows, self.cols);
        let mut data = vec![0.0; rows * cols];
        let mut norms = vec![0.0; rows];
        for i in 0..rows {
            let row = &self.data[i * cols..(i + 1) * cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm > 0.0 {
                for j in 0..cols {
                    data[i * cols + j] = row[j] / norm;
                }
            }
        }
        let y = data.clone();
        Tensor::record(
            rows,
            cols,
            data,
            &[self],
            vec![Some(Box::new(move |g| {
                let mut out = vec![0.0; rows * cols];
                for i in 0..rows {
                    if norms[i] == 0.0 {
                        continue;
                    }
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..cols {
                        out[i * cols + j] = (gr[j] - dot * yr[j]) / norms[i];
                    }
                }
                out
            }))],
        )
    }

    /// Horizontal concatenation; all inputs must share the row count.
    pub fn concat_cols(xs: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!xs.is_empty(), "concat_cols requires at least one tensor");
        let rows = xs[0].rows;
        for t in xs {
            if t.rows != rows {
                return Err(Tensor::shape_err("concat_cols", xs[0], t));
            }
        }
        let cols: usize = xs.iter().map(|t| t.cols).sum();
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for t in xs {
            for i in 0..rows {
                data[i * cols + offset..i * cols + offset + t.cols]
                    .copy_from_slice(&t.data[i * t.cols..(i + 1) * t.cols]);
            }
            offset += t.cols;
        }
        let mut grad_fns: Vec<Option<GradFn>> = Vec::new();
        let mut offset = 0;
        for t in xs {
            let (o, c) = (offset, t.cols);
            grad_fns.push(Some(Box::new(move |g: &[f64]| {
                let mut out = vec![0.0; rows * c];
                for i in 0..rows {
                    out[i * c..(i + 1) * c].copy_from_slice(&g[i * cols + o..i * cols + o + c]);
                }
                out
            })));
            offset += t.cols;
        }
        Tensor::record(rows, cols, data, xs, grad_fns).pipe_ok()
    }

    /// Vertical concatenation; all inputs must share the column count.
    pub fn concat_rows(xs: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!xs.is_empty(), "concat_rows requires at least one tensor");
        let cols = xs[0].cols;
        for t in xs {
            if t.cols != cols {
                return Err(Tensor::shape_err("concat_rows", xs[0], t));
            }
        }
        let rows: usize = xs.iter().map(|t| t.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for t in xs {
            data.extend_from_slice(&t.data);
        }
        let mut grad_fns: Vec<Option<GradFn>> = Vec::new();
        let mut offset = 0;
        for t in xs {
            let (o, len) = (offset, t.data.len());
            grad_fns.push(Some(Box::new(move |g: &[f64]| g[o..o + len].to_vec())));
            offset += t.data.len();
        }
        Tensor::record(rows, cols, data, xs, grad_fns).pipe_ok()
    }

    /// Mean binary cross entropy over `labels` with `self` as logits (n x 1),
    /// computed in the stable log-sum-exp form.
    pub fn bce_with_logits(&self, labels: &[f64]) -> Result<Tensor, TensorError> {
        if self.data.is_empty() {
            return Err(TensorError::EmptyBatch);
        }
        assert_eq!(self.cols, 1, "bce_with_logits expects an n x 1 logit column");
        assert_eq!(labels.len(), self.rows, "labels length must match logits");
        let n = self.rows as f64;
        let mut loss = 0.0;
        for (&y, &t) in self.data.iter().zip(labels) {
            loss += y.max(0.0) - y * t + (-y.abs()).exp().ln_1p();
        }
        loss /= n;
        let logits = self.data.clone();
        let labels = labels.to_vec();
        Tensor::record(
            1,
            1,
            vec![loss],
            &[self],
            vec![Some(Box::new(move |g| {
                logits
                    .iter()
                    .zip(&labels)
                    .map(|(&y, &t)| g[0] * (sigmoid_scalar(y) - t) / n)
                    .collect()
            }))],
        )
        .pipe_ok()
    }

    /// Backpropagate from this scalar; returns gradients for every reached node.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.data.len(), 1, "backward requires a scalar output");
        let (tape, id) = self
            .node
            .as_ref()
            .expect("backward requires a tracked tensor");
        let inner = tape.inner.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[*id] = Some(vec![1.0]);
        for nid in (0..=*id).rev() {
            let Some(g) = grads[nid].clone() else { continue };
            for (pid, gf) in &inner.nodes[nid].parents {
                let contribution = gf(&g);
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += c;
                        }
                    }
                    slot => *slot = Some(contribution),
                }
            }
        }
        Gradients { grads }
    }
}

trait PipeOk: Sized {
    fn pipe_ok<E>(self) -> Result<Self, E>;
}

impl PipeOk for Tensor {
    fn pipe_ok<E>(self) -> Result<Self, E> {
        Ok(self)
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a row-major `f64` buffer plus shape. All
//! differentiable computation goes through a [`Tape`], which records each
//! operation and replays it in reverse to accumulate gradients. Optimizers
//! live in [`optim`].

mod tape;
pub mod optim;

pub use optim::{AdamConfig, Optimizer};
pub use tape::{log_sigmoid, sigmoid, Gradients, Tape, TensorId};

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit reals.
///
/// Invariants: `data.len()` equals the product of `shape`, and every entry is
/// finite. Non-finite inputs are rejected at construction; operations check
/// their outputs the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry {bad} in tensor data")));
        }
        Ok(Tensor { shape, data, requires_grad })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols], requires_grad: false }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1, 1], vec![v], false)
    }

    pub fn from_rows(rows: &[Vec<f64>], requires_grad: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("from_rows: ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data, requires_grad)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }
}

/// Additive softmax mask: each cell is either 0 (attention on) or −∞
/// (attention off). Kept apart from [`Tensor`], whose entries must stay
/// finite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    /// `true` marks a cell whose additive mask value is −∞.
    off: Vec<bool>,
}

impl AttentionMask {
    /// Fully unmasked (all zeros).
    pub fn none(rows: usize, cols: usize) -> Self {
        AttentionMask { rows, cols, off: vec![false; rows * cols] }
    }

    /// Build from additive values; every entry must be exactly 0 or −∞.
    pub fn from_values(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "mask values length {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        let mut off = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 {
                off.push(false);
            } else if v == f64::NEG_INFINITY {
                off.push(true);
            } else {
                return Err(Error::Contract(format!("mask entries must be 0 or -inf, got {v}")));
            }
        }
        Ok(AttentionMask { rows, cols, off })
    }

    pub fn from_flags(rows: usize, cols: usize, off: Vec<bool>) -> Result<Self> {
        if off.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "mask flags length {} does not match {rows}x{cols}",
                off.len()
            )));
        }
        Ok(AttentionMask { rows, cols, off })
    }

    /// Square mask that disables cell (u, v) whenever u > v: every position
    /// may attend to itself and to later positions.
    pub fn upper_triangular(n: usize) -> Self {
        let mut off = vec![false; n * n];
        for u in 0..n {
            for v in 0..n {
                off[u * n + v] = u > v;
            }
        }
        AttentionMask { rows: n, cols: n, off }
    }

    /// Square causal mask: disables (u, v) whenever u < v, so every position
    /// attends only to itself and earlier positions.
    pub fn lower_triangular(n: usize) -> Self {
        let mut off = vec![false; n * n];
        for u in 0..n {
            for v in 0..n {
                off[u * n + v] = u < v;
            }
        }
        AttentionMask { rows: n, cols: n, off }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_off(&self, r: usize, c: usize) -> bool {
        self.off[r * self.cols + c]
    }

    /// Additive matrix form (0 / −∞), row-major.
    pub fn to_values(&self) -> Vec<f64> {
        self.off.iter().map(|&m| if m { f64::NEG_INFINITY } else { 0.0 }).collect()
    }
}

/// Plain 2-D matrix product used by the tape kernel.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

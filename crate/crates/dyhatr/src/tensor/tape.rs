//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every operation appends an entry holding the forward value and enough
//! bookkeeping to replay the step in reverse. Entries are referenced by
//! [`TensorId`] handles; creation order is a topological order, so the
//! backward pass is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, AttentionMask, Tensor};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Neg(TensorId),
    Scale(TensorId, f64),
    /// `[m x n] + [1 x n]`, the row added to every row of the left operand.
    AddRow(TensorId, TensorId),
    /// `[m x n] + [m x 1]`, the column added to every column.
    AddCol(TensorId, TensorId),
    /// `out[i, j] = a[i, j] * c[i, 0]`.
    MulCol(TensorId, TensorId),
    Transpose(TensorId),
    ConcatRows(Vec<TensorId>),
    ConcatCols(Vec<TensorId>),
    /// Row selection; duplicate indices are allowed and their gradients
    /// accumulate.
    GatherRows(TensorId, Vec<usize>),
    /// Rows of `src` placed at `indices` inside an otherwise-zero matrix.
    /// Indices must be unique.
    ScatterRows { src: TensorId, indices: Vec<usize> },
    SliceCols { src: TensorId, start: usize },
    /// Same row-major buffer under a new shape.
    Reshape(TensorId),
    SumAll(TensorId),
    /// Per-row sums, `[m x n] -> [m x 1]`.
    SumRows(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    LeakyRelu(TensorId, f64),
    Elu(TensorId),
    LogSigmoid(TensorId),
    SoftmaxRows(TensorId),
    /// Backward is identical to the plain softmax: off cells carry
    /// probability exactly zero, which kills their gradient term.
    MaskedSoftmaxRows(TensorId),
    /// `out[a, :] = sum_k weights[a, k] * values[indices[a*k_width + k], :]`.
    GatherWeightedSum { weights: TensorId, values: TensorId, indices: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::MulCol(..) => "mul_col",
            Op::Transpose(..) => "transpose",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::MaskedSoftmaxRows(..) => "masked_softmax_rows",
            Op::SumAll(..) => "sum_all",
            Op::SumRows(..) => "sum_rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Elu(..) => "elu",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::GatherWeightedSum { .. } => "gather_weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Entry {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by [`TensorId`], produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<(usize, usize)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<Tensor> {
        self.grads[id.0].as_ref().map(|g| {
            let (r, c) = self.shapes[id.0];
            Tensor::new(vec![r, c], g.clone(), false).expect("gradient is finite by construction")
        })
    }

    pub fn get_data(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Operation recorder for one forward pass. Build a fresh tape per pass.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers an input tensor, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Result<TensorId> {
        if !t.is_matrix() {
            return Err(Error::Dimension(format!(
                "tape holds 2-d tensors, got shape {:?}",
                t.shape()
            )));
        }
        let req = t.requires_grad();
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, req)
    }

    /// Registers a non-trainable input.
    pub fn constant(&mut self, t: &Tensor) -> Result<TensorId> {
        if !t.is_matrix() {
            return Err(Error::Dimension(format!(
                "tape holds 2-d tensors, got shape {:?}",
                t.shape()
            )));
        }
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Result<TensorId> {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let e = &self.entries[id.0];
        (e.rows, e.cols)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn value(&self, id: TensorId) -> Tensor {
        let e = &self.entries[id.0];
        Tensor::new(vec![e.rows, e.cols], e.data.clone(), false)
            .expect("tape entries stay finite")
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.entries[id.0].requires_grad
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<TensorId> {
        debug_assert_eq!(data.len(), rows * cols);
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} produced non-finite value {bad}",
                op.name()
            )));
        }
        self.entries.push(Entry { rows, cols, data, op, requires_grad });
        Ok(TensorId(self.entries.len() - 1))
    }

    fn entry(&self, id: TensorId) -> &Entry {
        &self.entries[id.0]
    }

    fn req2(&self, a: TensorId, b: TensorId) -> bool {
        self.entries[a.0].requires_grad || self.entries[b.0].requires_grad
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dims differ: [{m}x{ka}] * [{kb}x{n}]"
            )));
        }
        let out = matmul_raw(&self.entry(a).data, &self.entry(b).data, m, ka, n);
        let req = self.req2(a, b);
        self.push(m, n, out, Op::MatMul(a, b), req)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self
            .entry(a)
            .data
            .iter()
            .zip(&self.entry(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let req = self.req2(a, b);
        self.push(m, n, out, Op::Add(a, b), req)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.same_shape(a, b, "sub")?;
        let out: Vec<f64> = self
            .entry(a)
            .data
            .iter()
            .zip(&self.entry(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let req = self.req2(a, b);
        self.push(m, n, out, Op::Sub(a, b), req)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, n) = self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self
            .entry(a)
            .data
            .iter()
            .zip(&self.entry(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let req = self.req2(a, b);
        self.push(m, n, out, Op::Mul(a, b), req)
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.entry(a).data.iter().map(|x| -x).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::Neg(a), req)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("scale factor {c} is not finite")));
        }
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.entry(a).data.iter().map(|x| c * x).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::Scale(a, c), req)
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != n {
            return Err(Error::Dimension(format!(
                "add_row expects [1x{n}] row for [{m}x{n}] matrix, got [{rr}x{rc}]"
            )));
        }
        let rd = &self.entry(row).data;
        let ad = &self.entry(a).data;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] + rd[j]);
            }
        }
        let req = self.req2(a, row);
        self.push(m, n, out, Op::AddRow(a, row), req)
    }

    pub fn add_col(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cr != m || cc != 1 {
            return Err(Error::Dimension(format!(
                "add_col expects [{m}x1] column for [{m}x{n}] matrix, got [{cr}x{cc}]"
            )));
        }
        let cd = &self.entry(col).data;
        let ad = &self.entry(a).data;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] + cd[i]);
            }
        }
        let req = self.req2(a, col);
        self.push(m, n, out, Op::AddCol(a, col), req)
    }

    pub fn mul_col(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cr != m || cc != 1 {
            return Err(Error::Dimension(format!(
                "mul_col expects [{m}x1] column for [{m}x{n}] matrix, got [{cr}x{cc}]"
            )));
        }
        let cd = &self.entry(col).data;
        let ad = &self.entry(a).data;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(ad[i * n + j] * cd[i]);
            }
        }
        let req = self.req2(a, col);
        self.push(m, n, out, Op::MulCol(a, col), req)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let ad = &self.entry(a).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let req = self.entry(a).requires_grad;
        self.push(n, m, out, Op::Transpose(a), req)
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of no tensors".into()));
        }
        let (_, n) = self.shape(parts[0]);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != n {
                return Err(Error::Dimension(format!(
                    "concat_rows column mismatch: {n} vs {pc}"
                )));
            }
            rows += pr;
            out.extend_from_slice(&self.entry(p).data);
        }
        let req = parts.iter().any(|&p| self.entry(p).requires_grad);
        self.push(rows, n, out, Op::ConcatRows(parts.to_vec()), req)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of no tensors".into()));
        }
        let (m, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != m {
                return Err(Error::Dimension(format!(
                    "concat_cols row mismatch: {m} vs {pr}"
                )));
            }
            cols += pc;
        }
        let mut out = Vec::with_capacity(m * cols);
        for i in 0..m {
            for &p in parts {
                let (_, pc) = self.shape(p);
                let pd = &self.entry(p).data;
                out.extend_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
        }
        let req = parts.iter().any(|&p| self.entry(p).requires_grad);
        self.push(m, cols, out, Op::ConcatCols(parts.to_vec()), req)
    }

    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Dimension(format!(
                "gather_rows index {bad} out of bounds for {m} rows"
            )));
        }
        let ad = &self.entry(a).data;
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(&ad[i * n..(i + 1) * n]);
        }
        let req = self.entry(a).requires_grad;
        self.push(indices.len(), n, out, Op::GatherRows(a, indices.to_vec()), req)
    }

    pub fn scatter_rows(&mut self, src: TensorId, indices: &[usize], rows: usize) -> Result<TensorId> {
        let (m, n) = self.shape(src);
        if indices.len() != m {
            return Err(Error::Dimension(format!(
                "scatter_rows needs one index per source row: {m} rows, {} indices",
                indices.len()
            )));
        }
        let mut seen = vec![false; rows];
        for &i in indices {
            if i >= rows {
                return Err(Error::Dimension(format!(
                    "scatter_rows index {i} out of bounds for {rows} rows"
                )));
            }
            if seen[i] {
                return Err(Error::Contract(format!("scatter_rows duplicate index {i}")));
            }
            seen[i] = true;
        }
        let sd = &self.entry(src).data;
        let mut out = vec![0.0; rows * n];
        for (k, &i) in indices.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(&sd[k * n..(k + 1) * n]);
        }
        let req = self.entry(src).requires_grad;
        self.push(rows, n, out, Op::ScatterRows { src, indices: indices.to_vec() }, req)
    }

    pub fn slice_cols(&mut self, src: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (m, n) = self.shape(src);
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "slice_cols range {start}..{end} invalid for {n} columns"
            )));
        }
        let w = end - start;
        let sd = &self.entry(src).data;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&sd[i * n + start..i * n + end]);
        }
        let req = self.entry(src).requires_grad;
        self.push(m, w, out, Op::SliceCols { src, start }, req)
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(Error::Dimension(format!(
                "reshape [{m}x{n}] to [{rows}x{cols}] changes element count"
            )));
        }
        let out = self.entry(a).data.clone();
        let req = self.entry(a).requires_grad;
        self.push(rows, cols, out, Op::Reshape(a), req)
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: f64 = self.entry(a).data.iter().sum();
        let req = self.entry(a).requires_grad;
        self.push(1, 1, vec![s], Op::SumAll(a), req)
    }

    pub fn sum_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let ad = &self.entry(a).data;
        let out: Vec<f64> = (0..m).map(|i| ad[i * n..(i + 1) * n].iter().sum()).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, 1, out, Op::SumRows(a), req)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.entry(a).data.iter().map(|&x| sigmoid(x)).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::Sigmoid(a), req)
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.entry(a).data.iter().map(|x| x.tanh()).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::Tanh(a), req)
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self
            .entry(a)
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::LeakyRelu(a, slope), req)
    }

    pub fn elu(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self
            .entry(a)
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
            .collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::Elu(a), req)
    }

    pub fn log_sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.entry(a).data.iter().map(|&x| log_sigmoid(x)).collect();
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::LogSigmoid(a), req)
    }

    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let ad = &self.entry(a).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            softmax_into(row, None, &mut out[i * n..(i + 1) * n])?;
        }
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::SoftmaxRows(a), req)
    }

    /// Softmax over the cells the mask leaves on; off cells come out exactly
    /// zero. A row with every cell off is an error.
    pub fn masked_softmax_rows(&mut self, a: TensorId, mask: &AttentionMask) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        if mask.rows() != m || mask.cols() != n {
            return Err(Error::Dimension(format!(
                "mask [{}x{}] does not match logits [{m}x{n}]",
                mask.rows(),
                mask.cols()
            )));
        }
        let ad = &self.entry(a).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let on: Vec<bool> = (0..n).map(|j| !mask.is_off(i, j)).collect();
            if on.iter().all(|&b| !b) {
                return Err(Error::DegenerateMask(format!(
                    "row {i} has every attention cell masked off"
                )));
            }
            softmax_into(row, Some(&on), &mut out[i * n..(i + 1) * n])?;
        }
        let req = self.entry(a).requires_grad;
        self.push(m, n, out, Op::MaskedSoftmaxRows(a), req)
    }

    /// Per-row convex-style combination of value rows:
    /// `out[a, :] = sum_k weights[a, k] * values[indices[a*K + k], :]`.
    pub fn gather_weighted_sum(
        &mut self,
        weights: TensorId,
        values: TensorId,
        indices: &[usize],
    ) -> Result<TensorId> {
        let (aw, k) = self.shape(weights);
        let (nv, d) = self.shape(values);
        if indices.len() != aw * k {
            return Err(Error::Dimension(format!(
                "gather_weighted_sum needs {aw}*{k} indices, got {}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= nv) {
            return Err(Error::Dimension(format!(
                "gather_weighted_sum index {bad} out of bounds for {nv} value rows"
            )));
        }
        let wd = &self.entry(weights).data;
        let vd = &self.entry(values).data;
        let mut out = vec![0.0; aw * d];
        for a in 0..aw {
            let orow = &mut out[a * d..(a + 1) * d];
            for kk in 0..k {
                let w = wd[a * k + kk];
                if w == 0.0 {
                    continue;
                }
                let vrow = &vd[indices[a * k + kk] * d..indices[a * k + kk] * d + d];
                for (o, &v) in orow.iter_mut().zip(vrow) {
                    *o += w * v;
                }
            }
        }
        let req = self.req2(weights, values);
        self.push(
            aw,
            d,
            out,
            Op::GatherWeightedSum { weights, values, indices: indices.to_vec() },
            req,
        )
    }

    fn same_shape(&self, a: TensorId, b: TensorId, ctx: &str) -> Result<(usize, usize)> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        if (m, n) != (bm, bn) {
            return Err(Error::Dimension(format!(
                "{ctx} shape mismatch: [{m}x{n}] vs [{bm}x{bn}]"
            )));
        }
        Ok((m, n))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate for every entry
    /// on a path from a `requires_grad` leaf to the loss.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let le = self.entry(loss);
        if le.data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got [{}x{}]",
                le.rows, le.cols
            )));
        }
        if !le.requires_grad {
            return Err(Error::Contract(
                "loss does not depend on any trainable tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.entries.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.entries[idx].requires_grad {
                continue;
            }
            let g = grads[idx].clone().expect("checked above");
            let (m, n) = (self.entries[idx].rows, self.entries[idx].cols);
            match &self.entries[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (am, ak) = self.shape(*a);
                    let ad = &self.entry(*a).data;
                    let bd = &self.entry(*b).data;
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, am * ak);
                        for i in 0..am {
                            for p in 0..ak {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bd[p * n + j];
                                }
                                ga[i * ak + p] += s;
                            }
                        }
                    }
                    if self.requires_grad(*b) {
                        let gb = ensure(&mut grads, b.0, ak * n);
                        for p in 0..ak {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..am {
                                    s += ad[i * ak + p] * g[i * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &t in &[*a, *b] {
                        if self.requires_grad(t) {
                            let gt = ensure(&mut grads, t.0, m * n);
                            for (gi, &gv) in gt.iter_mut().zip(&g) {
                                *gi += gv;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi += gv;
                        }
                    }
                    if self.requires_grad(*b) {
                        let gb = ensure(&mut grads, b.0, m * n);
                        for (gi, &gv) in gb.iter_mut().zip(&g) {
                            *gi -= gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let ad = self.entry(*a).data.clone();
                    let bd = self.entry(*b).data.clone();
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * bd[i];
                        }
                    }
                    if self.requires_grad(*b) {
                        let gb = ensure(&mut grads, b.0, m * n);
                        for i in 0..m * n {
                            gb[i] += g[i] * ad[i];
                        }
                    }
                }
                Op::Neg(a) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi -= gv;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.requires_grad(*a) {
                        let c = *c;
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi += c * gv;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi += gv;
                        }
                    }
                    if self.requires_grad(*row) {
                        let gr = ensure(&mut grads, row.0, n);
                        for i in 0..m {
                            for j in 0..n {
                                gr[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::AddCol(a, col) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi += gv;
                        }
                    }
                    if self.requires_grad(*col) {
                        let gc = ensure(&mut grads, col.0, m);
                        for i in 0..m {
                            for j in 0..n {
                                gc[i] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::MulCol(a, col) => {
                    let ad = self.entry(*a).data.clone();
                    let cd = self.entry(*col).data.clone();
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m {
                            for j in 0..n {
                                ga[i * n + j] += g[i * n + j] * cd[i];
                            }
                        }
                    }
                    if self.requires_grad(*col) {
                        let gc = ensure(&mut grads, col.0, m);
                        for i in 0..m {
                            for j in 0..n {
                                gc[i] += g[i * n + j] * ad[i * n + j];
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m {
                            for j in 0..n {
                                ga[j * m + i] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (pr, _) = self.shape(p);
                        if self.requires_grad(p) {
                            let gp = ensure(&mut grads, p.0, pr * n);
                            for (gi, &gv) in gp.iter_mut().zip(&g[off..off + pr * n]) {
                                *gi += gv;
                            }
                        }
                        off += pr * n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (_, pc) = self.shape(p);
                        if self.requires_grad(p) {
                            let gp = ensure(&mut grads, p.0, m * pc);
                            for i in 0..m {
                                for j in 0..pc {
                                    gp[i * pc + j] += g[i * n + off + j];
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::GatherRows(a, indices) => {
                    if self.requires_grad(*a) {
                        let (am, _) = self.shape(*a);
                        let ga = ensure(&mut grads, a.0, am * n);
                        for (r, &i) in indices.iter().enumerate() {
                            for j in 0..n {
                                ga[i * n + j] += g[r * n + j];
                            }
                        }
                    }
                }
                Op::ScatterRows { src, indices, .. } => {
                    if self.requires_grad(*src) {
                        let (sm, _) = self.shape(*src);
                        let gs = ensure(&mut grads, src.0, sm * n);
                        for (k, &i) in indices.iter().enumerate() {
                            for j in 0..n {
                                gs[k * n + j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::SliceCols { src, start, .. } => {
                    if self.requires_grad(*src) {
                        let (sm, sn) = self.shape(*src);
                        let gs = ensure(&mut grads, src.0, sm * sn);
                        for i in 0..m {
                            for j in 0..n {
                                gs[i * sn + start + j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    if self.requires_grad(*a) {
                        let ga = ensure(&mut grads, a.0, m * n);
                        for (gi, &gv) in ga.iter_mut().zip(&g) {
                            *gi += gv;
                        }
                    }
                }
                Op::SumAll(a) => {
                    if self.requires_grad(*a) {
                        let (am, an) = self.shape(*a);
                        let gs = g[0];
                        let ga = ensure(&mut grads, a.0, am * an);
                        for gi in ga.iter_mut() {
                            *gi += gs;
                        }
                    }
                }
                Op::SumRows(a) => {
                    if self.requires_grad(*a) {
                        let (am, an) = self.shape(*a);
                        let ga = ensure(&mut grads, a.0, am * an);
                        for i in 0..am {
                            for j in 0..an {
                                ga[i * an + j] += g[i];
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.requires_grad(*a) {
                        let y = self.entries[idx].data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.requires_grad(*a) {
                        let y = self.entries[idx].data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if self.requires_grad(*a) {
                        let slope = *slope;
                        let y = self.entries[idx].data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * if y[i] < 0.0 { slope } else { 1.0 };
                        }
                    }
                }
                Op::Elu(a) => {
                    if self.requires_grad(*a) {
                        let y = self.entries[idx].data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * if y[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                        }
                    }
                }
                Op::LogSigmoid(a) => {
                    if self.requires_grad(*a) {
                        let x = self.entry(*a).data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m * n {
                            ga[i] += g[i] * sigmoid(-x[i]);
                        }
                    }
                }
                Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                    if self.requires_grad(*a) {
                        let y = self.entries[idx].data.clone();
                        let ga = ensure(&mut grads, a.0, m * n);
                        for i in 0..m {
                            let mut dot = 0.0;
                            for j in 0..n {
                                dot += g[i * n + j] * y[i * n + j];
                            }
                            for j in 0..n {
                                ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                            }
                        }
                    }
                }
                Op::GatherWeightedSum { weights, values, indices } => {
                    let (aw, k) = self.shape(*weights);
                    let wd = self.entry(*weights).data.clone();
                    let vd = self.entry(*values).data.clone();
                    let d = n;
                    if self.requires_grad(*weights) {
                        let gw = ensure(&mut grads, weights.0, aw * k);
                        for a in 0..aw {
                            for kk in 0..k {
                                let vrow = indices[a * k + kk] * d;
                                let mut s = 0.0;
                                for j in 0..d {
                                    s += g[a * d + j] * vd[vrow + j];
                                }
                                gw[a * k + kk] += s;
                            }
                        }
                    }
                    if self.requires_grad(*values) {
                        let (nv, _) = self.shape(*values);
                        let gv = ensure(&mut grads, values.0, nv * d);
                        for a in 0..aw {
                            for kk in 0..k {
                                let w = wd[a * k + kk];
                                if w == 0.0 {
                                    continue;
                                }
                                let vrow = indices[a * k + kk] * d;
                                for j in 0..d {
                                    gv[vrow + j] += w * g[a * d + j];
                                }
                            }
                        }
                    }
                }
            }
        }

        let shapes = self.entries.iter().map(|e| (e.rows, e.cols)).collect();
        Ok(Gradients { shapes, grads })
    }
}

fn ensure(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Exp-normalize over the cells `on` leaves enabled (all cells when `None`).
fn softmax_into(row: &[f64], on: Option<&[bool]>, out: &mut [f64]) -> Result<()> {
    let enabled = |j: usize| on.map_or(true, |m| m[j]);
    let mut mx = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if enabled(j) && v > mx {
            mx = v;
        }
    }
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if enabled(j) {
            let e = (v - mx).exp();
            out[j] = e;
            sum += e;
        } else {
            out[j] = 0.0;
        }
    }
    if !(sum.is_finite() && sum > 0.0) {
        return Err(Error::Numeric(format!("softmax normalizer degenerate: {sum}")));
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

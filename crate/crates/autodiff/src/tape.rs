use std::sync::Arc;

use crate::error::TensorError;
use crate::tensor::{matmul_a_bt_into, matmul_at_b_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    RowDot(Var, Var),
    ScaleRows(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    PickPerRow(Var, Arc<[usize]>),
    StopGradient,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and a single reverse sweep visits every node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, materialising zeros when nothing reached it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a `[d]` bias to every row of an `[n×d]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        tx.require_rank("add_bias", 2)?;
        tb.require_rank("add_bias", 1)?;
        let d = tx.cols();
        if tb.len() != d {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Concatenates `[n×d_k]` matrices along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(parts[0]);
        first.require_rank("concat_cols", 2)?;
        let n = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            t.require_rank("concat_cols", 2)?;
            if t.rows() != n {
                return Err(shape_err("concat_cols", first, t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..n {
                data[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![n, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `[start, end)` of an `[n×d]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        t.require_rank("slice_cols", 2)?;
        if end > t.cols() || start > end {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                bound: t.cols(),
            });
        }
        let (n, w) = (t.rows(), end - start);
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, w], data)?, Op::SliceCols(x, start), rg))
    }

    /// `out[e] = x[index[e]]` for rows.
    pub fn gather_rows(&mut self, x: Var, index: &Arc<[usize]>) -> Result<Var, TensorError> {
        let t = self.value(x);
        t.require_rank("gather_rows", 2)?;
        let (n, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index.iter() {
            if i >= n {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![index.len(), d], data)?,
            Op::GatherRows(x, index.clone()),
            rg,
        ))
    }

    /// `out[index[e]] += x[e]` into `num_rows` rows. Accepts `[E×d]` or `[E]`.
    pub fn scatter_add_rows(&mut self, x: Var, index: &Arc<[usize]>, num_rows: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rows() != index.len() || t.rank() == 0 {
            return Err(TensorError::Shape {
                op: "scatter_add_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let d = t.cols();
        let mut data = vec![0.0; num_rows * d];
        for (e, &i) in index.iter().enumerate() {
            if i >= num_rows {
                return Err(TensorError::Index {
                    op: "scatter_add_rows",
                    index: i,
                    bound: num_rows,
                });
            }
            for (o, v) in data[i * d..(i + 1) * d].iter_mut().zip(t.row(e)) {
                *o += v;
            }
        }
        let shape = if t.rank() == 1 { vec![num_rows] } else { vec![num_rows, d] };
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::ScatterAddRows(x, index.clone()), rg))
    }

    /// Softmax of `scores[E]` within each segment `segment[e]`.
    ///
    /// Each segment's maximum is subtracted before exponentiation. An empty
    /// score vector yields an empty output.
    pub fn segment_softmax(&mut self, scores: Var, segment: &Arc<[usize]>) -> Result<Var, TensorError> {
        let t = self.value(scores);
        t.require_rank("segment_softmax", 1)?;
        if t.len() != segment.len() {
            return Err(TensorError::Shape {
                op: "segment_softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![segment.len()],
            });
        }
        let out = segment_softmax_values(t.data(), segment);
        let rg = self.rg(scores);
        Ok(self.push(Tensor::vector(out), Op::SegmentSoftmax(scores, segment.clone()), rg))
    }

    /// Row-wise dot product of two `[n×d]` matrices, giving `[n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.require_rank("row_dot", 2)?;
        if ta.shape() != tb.shape() {
            return Err(shape_err("row_dot", ta, tb));
        }
        let out = (0..ta.rows())
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::vector(out), Op::RowDot(a, b), rg))
    }

    /// Multiplies row `r` of `[n×d]` by `w[r]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        tx.require_rank("scale_rows", 2)?;
        tw.require_rank("scale_rows", 1)?;
        if tx.rows() != tw.len() {
            return Err(shape_err("scale_rows", tx, tw));
        }
        let d = tx.cols();
        let mut data = tx.data().to_vec();
        for (r, s) in tw.data().iter().enumerate() {
            for v in &mut data[r * d..(r + 1) * d] {
                *v *= s;
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(tx.shape().to_vec(), data)?, Op::ScaleRows(x, w), rg))
    }

    /// Per-row normalisation to zero mean and unit variance, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        tx.require_rank("layer_norm", 2)?;
        let d = tx.cols();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let n = tx.rows();
        let mut normalized = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                normalized[r * d + c] = xh;
                out[r * d + c] = tg.data()[c] * xh + tb.data()[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = if t.is_empty() { 0.0 } else { t.sum() / t.len() as f64 };
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanAll(x), rg)
    }

    /// Sums each row of `[n×d]`, giving `[n]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        t.require_rank("sum_cols", 2)?;
        let out = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::SumCols(x), rg))
    }

    /// `out[r] = x[r, cols[r]]`.
    pub fn pick_per_row(&mut self, x: Var, cols: &Arc<[usize]>) -> Result<Var, TensorError> {
        let t = self.value(x);
        t.require_rank("pick_per_row", 2)?;
        if cols.len() != t.rows() {
            return Err(TensorError::Shape {
                op: "pick_per_row",
                lhs: t.shape().to_vec(),
                rhs: vec![cols.len()],
            });
        }
        let mut out = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= t.cols() {
                return Err(TensorError::Index {
                    op: "pick_per_row",
                    index: c,
                    bound: t.cols(),
                });
            }
            out.push(t.at(r, c));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::PickPerRow(x, cols.clone()), rg))
    }

    /// Identity in the forward pass; blocks all gradient flow backwards.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn deposit(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.accumulate(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |like: &Tensor, data: Vec<f64>| Tensor::new(like.shape().to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Leaf | Op::Constant | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_a_bt_into(g.data(), tb.data(), &mut da, m, n, k);
                    self.deposit(grads, *a, shaped(ta, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_b_into(ta.data(), g.data(), &mut db, m, k, n);
                    self.deposit(grads, *b, shaped(tb, db));
                }
            }
            Op::Add(a, b) => {
                self.deposit(grads, *a, g.clone());
                self.deposit(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.deposit(grads, *a, g.clone());
                let neg = g.data().iter().map(|v| -v).collect();
                self.deposit(grads, *b, shaped(g, neg));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.deposit(grads, *a, shaped(ta, d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.deposit(grads, *b, shaped(tb, d));
                }
            }
            Op::AddBias(x, bias) => {
                self.deposit(grads, *x, g.clone());
                if self.rg(*bias) {
                    let d = g.cols();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks(d.max(1)) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.deposit(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Scale(x, f) => {
                let d = g.data().iter().map(|v| v * f).collect();
                self.deposit(grads, *x, shaped(g, d));
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.deposit(grads, *x, shaped(tx, d));
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.deposit(grads, p, shaped(tp, d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let (n, d, w) = (tx.rows(), tx.cols(), g.cols());
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + w].copy_from_slice(g.row(r));
                }
                self.deposit(grads, *x, shaped(tx, dx));
            }
            Op::GatherRows(x, index) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (e, &i) in index.iter().enumerate() {
                    for (o, v) in dx[i * d..(i + 1) * d].iter_mut().zip(g.row(e)) {
                        *o += v;
                    }
                }
                self.deposit(grads, *x, shaped(tx, dx));
            }
            Op::ScatterAddRows(x, index) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let mut dx = Vec::with_capacity(tx.len());
                for &i in index.iter() {
                    dx.extend_from_slice(&g.data()[i * d..(i + 1) * d]);
                }
                self.deposit(grads, *x, shaped(tx, dx));
            }
            Op::SegmentSoftmax(x, segment) => {
                let y = node.value.data();
                let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; nseg];
                for (e, &s) in segment.iter().enumerate() {
                    dot[s] += y[e] * g.data()[e];
                }
                let dx = segment
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| y[e] * (g.data()[e] - dot[s]))
                    .collect();
                self.deposit(grads, *x, Tensor::vector(dx));
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut da = Vec::with_capacity(ta.len());
                    for (r, gv) in g.data().iter().enumerate() {
                        da.extend(tb.row(r).iter().map(|v| v * gv));
                    }
                    self.deposit(grads, *a, shaped(ta, da));
                }
                if self.rg(*b) {
                    let mut db = Vec::with_capacity(tb.len());
                    for (r, gv) in g.data().iter().enumerate() {
                        db.extend(ta.row(r).iter().map(|v| v * gv));
                    }
                    self.deposit(grads, *b, shaped(tb, db));
                }
            }
            Op::ScaleRows(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let d = tx.cols();
                if self.rg(*x) {
                    let mut dx = g.data().to_vec();
                    for (r, s) in tw.data().iter().enumerate() {
                        for v in &mut dx[r * d..(r + 1) * d] {
                            *v *= s;
                        }
                    }
                    self.deposit(grads, *x, shaped(tx, dx));
                }
                if self.rg(*w) {
                    let dw = (0..tx.rows())
                        .map(|r| tx.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    self.deposit(grads, *w, Tensor::vector(dw));
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let tg = self.value(*gain);
                let (n, d) = (g.rows(), g.cols());
                if self.rg(*gain) {
                    let mut dg = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            dg[c] += g.data()[r * d + c] * normalized[r * d + c];
                        }
                    }
                    self.deposit(grads, *gain, Tensor::vector(dg));
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; d];
                    for r in 0..n {
                        for c in 0..d {
                            db[c] += g.data()[r * d + c];
                        }
                    }
                    self.deposit(grads, *bias, Tensor::vector(db));
                }
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * d];
                    let df = d as f64;
                    for r in 0..n {
                        let xh = &normalized[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = (0..d).map(|c| g.data()[r * d + c] * tg.data()[c]).collect();
                        let sum_dxh: f64 = dxh.iter().sum();
                        let sum_dxh_xh: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            dx[r * d + c] = inv_std[r] / df * (df * dxh[c] - sum_dxh - xh[c] * sum_dxh_xh);
                        }
                    }
                    self.deposit(grads, *x, shaped(g, dx));
                }
            }
            Op::SumAll(x) => {
                let tx = self.value(*x);
                self.deposit(grads, *x, Tensor::full(tx.shape(), g.item()));
            }
            Op::MeanAll(x) => {
                let tx = self.value(*x);
                let scale = if tx.is_empty() { 0.0 } else { g.item() / tx.len() as f64 };
                self.deposit(grads, *x, Tensor::full(tx.shape(), scale));
            }
            Op::SumCols(x) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let mut dx = Vec::with_capacity(tx.len());
                for gv in g.data() {
                    dx.extend(std::iter::repeat(*gv).take(d));
                }
                self.deposit(grads, *x, shaped(tx, dx));
            }
            Op::PickPerRow(x, cols) => {
                let tx = self.value(*x);
                let d = tx.cols();
                let mut dx = vec![0.0; tx.len()];
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * d + c] = g.data()[r];
                }
                self.deposit(grads, *x, shaped(tx, dx));
            }
        }
    }
}

fn segment_softmax_values(scores: &[f64], segment: &[usize]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let nseg = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; nseg];
    for (s, &seg) in scores.iter().zip(segment) {
        if *s > max[seg] {
            max[seg] = *s;
        }
    }
    let exps: Vec<f64> = scores.iter().zip(segment).map(|(s, &seg)| (s - max[seg]).exp()).collect();
    let mut total = vec![0.0; nseg];
    for (e, &seg) in exps.iter().zip(segment) {
        total[seg] += e;
    }
    exps.iter().zip(segment).map(|(e, &seg)| e / total[seg]).collect()
}

//! Reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends a node holding its forward value and the recipe
//! for its backward pass. [`Tape::backward`] walks the nodes in reverse
//! creation order once, accumulating gradients into every node that depends
//! on a leaf created with `requires_grad`.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use thiserror::Error;

use super::Tensor;
use crate::util;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("{op}: index out of range")]
    Index { op: &'static str },
    #[error("softmax row {0} has every entry masked")]
    AllMasked(usize),
    #[error("batch_norm needs at least two rows in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar([usize; 2]),
    #[error("backward already ran on this tape")]
    BackwardTwice,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    MeanRows(Var),
    Sum(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, Vec<bool>),
    LogSoftmax(Var, Vec<bool>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        /// Training mode: statistics come from the batch and carry gradient.
        batch_stats: bool,
    },
    Pick(Var, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitives; single-threaded by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: core::cell::Cell<bool>,
}

/// Gradients indexed by [`Var`]; missing entries are zero.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient or zeros of `shape`.
    pub fn get_or_zero(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TapeError {
    TapeError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes; usable as a mark for [`Tape::truncate`].
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node created after `mark`; handles past it become invalid.
    /// Also re-arms [`Tape::backward`].
    pub fn truncate(&self, mark: usize) {
        self.nodes.borrow_mut().truncate(mark);
        self.backward_done.set(false);
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let (x, y) = (&n[a.0].value, &n[b.0].value);
            if x.cols() != y.rows() {
                return Err(shape_err("matmul", x, y));
            }
            x.matmul(y)
        };
        Ok(self.push(out, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), self.rg(&[a]))
    }

    fn zip(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TapeError> {
        let n = self.nodes.borrow();
        let (x, y) = (&n[a.0].value, &n[b.0].value);
        if x.shape() != y.shape() {
            return Err(shape_err(op, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_vec(x.rows(), x.cols(), data))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TapeError> {
        let out = self.zip(a, b, "add", |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TapeError> {
        let out = self.zip(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), self.rg(&[a, b])))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TapeError> {
        let out = self.zip(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), self.rg(&[a]))
    }

    /// `a[r, :] + row` for every row of `a`; `row` is `1 x cols`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let (x, b) = (&n[a.0].value, &n[row.0].value);
            if b.rows() != 1 || b.cols() != x.cols() {
                return Err(shape_err("add_row", x, b));
            }
            let mut out = x.clone();
            for r in 0..x.rows() {
                for (o, bv) in out.data_mut()[r * x.cols()..(r + 1) * x.cols()].iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.push(out, Op::AddRow(a, row), self.rg(&[a, row])))
    }

    /// Side-by-side concatenation; all parts share the row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let rows = n[parts[0].0].value.rows();
            let cols: usize = parts.iter().map(|p| n[p.0].value.cols()).sum();
            for p in parts {
                if n[p.0].value.rows() != rows {
                    return Err(shape_err("concat_cols", &n[parts[0].0].value, &n[p.0].value));
                }
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(n[p.0].value.row_slice(r));
                }
            }
            Tensor::from_vec(rows, cols, data)
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), self.rg(parts)))
    }

    /// Stacks parts vertically; all parts share the column count.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let cols = n[parts[0].0].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = &n[p.0].value;
                if t.cols() != cols {
                    return Err(shape_err("concat_rows", &n[parts[0].0].value, t));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(rows, cols, data)
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), self.rg(parts)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let x = &n[a.0].value;
            if start > end || end > x.cols() {
                return Err(TapeError::Index { op: "slice_cols" });
            }
            let mut data = Vec::with_capacity(x.rows() * (end - start));
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row_slice(r)[start..end]);
            }
            Tensor::from_vec(x.rows(), end - start, data)
        };
        Ok(self.push(out, Op::SliceCols(a, start), self.rg(&[a])))
    }

    /// Rows at `index`, in that order (repeats allowed).
    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var, TapeError> {
        let out = {
            let n = self.nodes.borrow();
            let x = &n[a.0].value;
            let mut data = Vec::with_capacity(index.len() * x.cols());
            for &r in index {
                if r >= x.rows() {
                    return Err(TapeError::Index { op: "gather_rows" });
                }
                data.extend_from_slice(x.row_slice(r));
            }
            Tensor::from_vec(index.len(), x.cols(), data)
        };
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), self.rg(&[a])))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var, TapeError> {
        let out = {
            let x = self.value(a);
            if x.len() != rows * cols {
                return Err(TapeError::Shape {
                    op: "reshape",
                    left: x.shape(),
                    right: [rows, cols],
                });
            }
            Tensor::from_vec(rows, cols, x.data().to_vec())
        };
        Ok(self.push(out, Op::Reshape(a), self.rg(&[a])))
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&self, a: Var) -> Result<Var, TapeError> {
        let out = {
            let x = self.value(a);
            if x.rows() == 0 {
                return Err(TapeError::Index { op: "mean_rows" });
            }
            let mut m = Tensor::zeros(1, x.cols());
            for r in 0..x.rows() {
                for (o, v) in m.data_mut().iter_mut().zip(x.row_slice(r)) {
                    *o += v;
                }
            }
            m.scale_assign(1.0 / x.rows() as f64);
            m
        };
        Ok(self.push(out, Op::MeanRows(a), self.rg(&[a])))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.rg(&[a]))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, self.rg(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, util::tanh, Op::Tanh(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, util::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, util::ln, Op::Log(a))
    }

    fn masked_rows(&self, a: Var, keep: &[bool], log: bool) -> Result<Tensor, TapeError> {
        let x = self.value(a);
        if keep.len() != x.len() {
            return Err(TapeError::Shape {
                op: "softmax_masked",
                left: x.shape(),
                right: [1, keep.len()],
            });
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(x.rows(), cols);
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let k = &keep[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(k)
                .filter(|(_, &kk)| kk)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TapeError::AllMasked(r));
            }
            let z: f64 = row
                .iter()
                .zip(k)
                .filter(|(_, &kk)| kk)
                .map(|(&v, _)| util::exp(v - max))
                .sum();
            let lz = util::ln(z);
            for c in 0..cols {
                let v = if !k[c] {
                    if log {
                        f64::NEG_INFINITY
                    } else {
                        0.0
                    }
                } else if log {
                    row[c] - max - lz
                } else {
                    util::exp(row[c] - max) / z
                };
                out.set(r, c, v);
            }
        }
        Ok(out)
    }

    /// Row-wise softmax over entries with `keep = true`; the rest are exactly 0.
    pub fn softmax_masked(&self, a: Var, keep: &[bool]) -> Result<Var, TapeError> {
        let out = self.masked_rows(a, keep, false)?;
        Ok(self.push(out, Op::Softmax(a, keep.to_vec()), self.rg(&[a])))
    }

    /// Row-wise log-softmax over kept entries; the rest are `-inf`.
    pub fn log_softmax_masked(&self, a: Var, keep: &[bool]) -> Result<Var, TapeError> {
        let out = self.masked_rows(a, keep, true)?;
        Ok(self.push(out, Op::LogSoftmax(a, keep.to_vec()), self.rg(&[a])))
    }

    /// Training-mode batch normalisation: statistics over rows, per column,
    /// biased variance. `gamma`, `beta` are `1 x cols`.
    pub fn batch_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TapeError> {
        let (out, xhat, inv_std) = {
            let n = self.nodes.borrow();
            let (xv, g, b) = (&n[x.0].value, &n[gamma.0].value, &n[beta.0].value);
            if xv.rows() < 2 {
                return Err(TapeError::BatchTooSmall(xv.rows()));
            }
            if g.shape() != [1, xv.cols()] || b.shape() != [1, xv.cols()] {
                return Err(shape_err("batch_norm", xv, g));
            }
            let (mean, var) = column_stats(xv);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / util::sqrt(v + eps)).collect();
            normalise(xv, g, b, &mean, &inv_std)
        };
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            self.rg(&[x, gamma, beta]),
        ))
    }

    /// Inference-mode batch normalisation with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var, TapeError> {
        let (out, xhat, inv_std) = {
            let n = self.nodes.borrow();
            let (xv, g, b) = (&n[x.0].value, &n[gamma.0].value, &n[beta.0].value);
            let c = xv.cols();
            if g.shape() != [1, c] || b.shape() != [1, c] || running_mean.len() != c || running_var.len() != c {
                return Err(shape_err("batch_norm_eval", xv, g));
            }
            let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / util::sqrt(v + eps)).collect();
            normalise(xv, g, b, running_mean, &inv_std)
        };
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            self.rg(&[x, gamma, beta]),
        ))
    }

    /// Entry `(r, c)` as a `1 x 1` node.
    pub fn pick(&self, a: Var, r: usize, c: usize) -> Result<Var, TapeError> {
        let v = {
            let x = self.value(a);
            if r >= x.rows() || c >= x.cols() {
                return Err(TapeError::Index { op: "pick" });
            }
            x.get(r, c)
        };
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, r, c), self.rg(&[a])))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        if self.backward_done.get() {
            return Err(TapeError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != [1, 1] {
            return Err(TapeError::NotScalar(shape));
        }
        self.backward_done.set(true);
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g.matmul(&val(*b).transpose()));
                    }
                    if needs(*b) {
                        accumulate(&mut grads[b.0], val(*a).transpose().matmul(&g));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
                Op::Add(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads[b.0], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let d = g.data().iter().zip(val(*b).data()).map(|(p, q)| p * q).collect();
                        accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                    }
                    if needs(*b) {
                        let d = g.data().iter().zip(val(*a).data()).map(|(p, q)| p * q).collect();
                        accumulate(&mut grads[b.0], Tensor::from_vec(g.rows(), g.cols(), d));
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.map(|x| x * s)),
                Op::AddRow(a, row) => {
                    if needs(*row) {
                        let mut s = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in s.data_mut().iter_mut().zip(g.row_slice(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads[row.0], s);
                    }
                    if needs(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        if needs(*p) {
                            let mut d = Vec::with_capacity(g.rows() * w);
                            for r in 0..g.rows() {
                                d.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads[p.0], Tensor::from_vec(g.rows(), w, d));
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = val(*p).rows();
                        if needs(*p) {
                            let d = g.data()[offset * g.cols()..(offset + h) * g.cols()].to_vec();
                            accumulate(&mut grads[p.0], Tensor::from_vec(h, g.cols(), d));
                        }
                        offset += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            d.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::GatherRows(a, index) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for (k, &r) in index.iter().enumerate() {
                        for c in 0..g.cols() {
                            let cur = d.get(r, c);
                            d.set(r, c, cur + g.get(k, c));
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Reshape(a) => {
                    let x = val(*a);
                    accumulate(&mut grads[a.0], Tensor::from_vec(x.rows(), x.cols(), g.into_data()));
                }
                Op::MeanRows(a) => {
                    let x = val(*a);
                    let inv = 1.0 / x.rows() as f64;
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for c in 0..x.cols() {
                            d.set(r, c, g.get(0, c) * inv);
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sum(a) => {
                    let x = val(*a);
                    accumulate(&mut grads[a.0], Tensor::filled(x.rows(), x.cols(), g.item()));
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Tanh(a) => {
                    let d = g.data().iter().zip(node.value.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                    accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Exp(a) => {
                    let d = g.data().iter().zip(node.value.data()).map(|(gv, y)| gv * y).collect();
                    accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Log(a) => {
                    let d = g.data().iter().zip(val(*a).data()).map(|(gv, x)| gv / x).collect();
                    accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Softmax(a, keep) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row_slice(r).iter().zip(y.row_slice(r)).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols() {
                            if keep[r * y.cols() + c] {
                                d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::LogSoftmax(a, keep) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut d = Tensor::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let k = &keep[r * cols..(r + 1) * cols];
                        let total: f64 = (0..cols).filter(|&c| k[c]).map(|c| g.get(r, c)).sum();
                        for c in 0..cols {
                            if k[c] {
                                d.set(r, c, g.get(r, c) - util::exp(y.get(r, c)) * total);
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (rows, cols) = (xhat.rows(), xhat.cols());
                    let mut sum_g = vec![0.0; cols];
                    let mut sum_gx = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            sum_g[c] += g.get(r, c);
                            sum_gx[c] += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    if needs(*beta) {
                        accumulate(&mut grads[beta.0], Tensor::row(&sum_g));
                    }
                    if needs(*gamma) {
                        accumulate(&mut grads[gamma.0], Tensor::row(&sum_gx));
                    }
                    if needs(*x) {
                        let gm = val(*gamma);
                        let mut d = Tensor::zeros(rows, cols);
                        let nf = rows as f64;
                        for r in 0..rows {
                            for c in 0..cols {
                                let k = gm.get(0, c) * inv_std[c];
                                let v = if *batch_stats {
                                    k / nf * (nf * g.get(r, c) - sum_g[c] - xhat.get(r, c) * sum_gx[c])
                                } else {
                                    k * g.get(r, c)
                                };
                                d.set(r, c, v);
                            }
                        }
                        accumulate(&mut grads[x.0], d);
                    }
                }
                Op::Pick(a, r, c) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.rows(), x.cols());
                    d.set(*r, *c, g.item());
                    accumulate(&mut grads[a.0], d);
                }
            }
        }
        // interior slots were consumed by the sweep; leaves keep theirs
        Ok(Gradients { grads })
    }
}

/// Per-column mean and biased variance.
pub(crate) fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(x.row_slice(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            let d = x.get(r, c) - mean[c];
            var[c] += d * d;
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    (mean, var)
}

fn normalise(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor, Vec<f64>) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut xhat = Tensor::zeros(rows, cols);
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let h = (x.get(r, c) - mean[c]) * inv_std[c];
            xhat.set(r, c, h);
            out.set(r, c, gamma.get(0, c) * h + beta.get(0, c));
        }
    }
    (out, xhat, inv_std.to_vec())
}

/// Exponential moving batch statistics feeding [`Tape::batch_norm_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    /// Mean 0, variance 1, momentum 0.1.
    pub fn new(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            var: vec![1.0; cols],
            momentum: 0.1,
        }
    }

    /// `stat <- (1 - momentum) * stat + momentum * batch_stat`.
    pub fn update(&mut self, x: &Tensor) {
        let (mean, var) = column_stats(x);
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

//! Reverse-mode differentiation over a recorded list of dense operations.
//!
//! A [`Tape`] is filled once, in evaluation order, and is immutable
//! afterwards. Every operation stores its forward value, so `backward` can
//! be replayed any number of times and under any [`BackpropMode`]. The
//! modes only differ at [`Tape::relu`] nodes; every other primitive uses its
//! exact vector-Jacobian product.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::tensor::DenseMatrix;

/// Backward rule applied at ReLU nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackpropMode {
    /// True derivative: pass where the forward input was positive.
    Standard,
    /// Pass where the upstream gradient is positive, ignoring the forward input.
    Deconvnet,
    /// Pass only where both the forward input and the upstream gradient are positive.
    Guided,
}

/// Gradient through a ReLU for one scalar.
#[inline]
pub fn relu_backward(mode: BackpropMode, x: f64, g: f64) -> f64 {
    let pass = match mode {
        BackpropMode::Standard => x > 0.0,
        BackpropMode::Deconvnet => g > 0.0,
        BackpropMode::Guided => x > 0.0 && g > 0.0,
    };
    if pass {
        g
    } else {
        0.0
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed edge list shared by gather/scatter primitives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(edges: &[(usize, usize)]) -> Self {
        Self {
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Select(Var, usize, usize),
    NllMean(Var, Arc<[(usize, usize)]>),
    GatherRows(Var, Arc<[usize]>),
    ConcatCols(Vec<Var>),
    EdgeAggregate {
        x: Var,
        coef: Var,
        edges: Arc<EdgeIndex>,
        heads: usize,
    },
    HeadDot {
        x: Var,
        att: Var,
        heads: usize,
    },
    SegmentSoftmax {
        x: Var,
        groups: Arc<[usize]>,
        n_groups: usize,
    },
    Dropout(Var, DenseMatrix),
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Values are kept for every node.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the output does not depend on it
    /// or it was recorded as a constant.
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, materialising zeros when it received none.
    pub fn get_or_zeros(&self, var: Var, tape: &Tape) -> DenseMatrix {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(var).shape();
            DenseMatrix::zeros(r, c)
        })
    }

    pub fn take(&mut self, var: Var) -> Option<DenseMatrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseMatrix {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Smallest magnitude among the inputs of piecewise-linear activations
    /// (ReLU, leaky ReLU) that lie on a gradient path; infinite when there
    /// are none. Finite-difference checks need this margin to exceed the
    /// step size.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) if n.requires_grad => Some(self.value(x)),
                _ => None,
            })
            .flat_map(|m| m.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "add shape mismatch"
        );
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "sub shape mismatch"
        );
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mul shape mismatch"
        );
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// `x + 1·b` for a `1×c` row `b`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &bb) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += bb;
            }
        }
        self.push(value, Op::AddRowBias(x, b), &[x, b])
    }

    /// Multiplies row `r` of `x` by `s[r]` for an `n×1` column `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.cols(), 1, "row scale must be a column vector");
        assert_eq!(xv.rows(), sv.rows(), "row scale length mismatch");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let f = sv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        self.push(value, Op::ScaleRows(x, s), &[x, s])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let value = self.value(x).map(|v| v + offset);
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Log(x), &[x])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = DenseMatrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&crate::tensor::softmax(xv.row(r)));
        }
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = DenseMatrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, &v) in value.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(value, Op::LogSoftmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = DenseMatrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = (xv.rows() * xv.cols()).max(1) as f64;
        let value = DenseMatrix::scalar(xv.sum() / n);
        self.push(value, Op::Mean(x), &[x])
    }

    /// Single entry as a `1×1` value.
    pub fn select(&mut self, x: Var, row: usize, col: usize) -> Var {
        let value = DenseMatrix::scalar(self.value(x).get(row, col));
        self.push(value, Op::Select(x, row, col), &[x])
    }

    /// `-mean(x[r, c])` over the listed entries, the negative log-likelihood
    /// when `x` holds log-probabilities.
    pub fn nll_mean(&mut self, x: Var, picks: &[(usize, usize)]) -> Var {
        assert!(!picks.is_empty(), "nll_mean needs at least one entry");
        let xv = self.value(x);
        let total: f64 = picks.iter().map(|&(r, c)| xv.get(r, c)).sum();
        let value = DenseMatrix::scalar(-total / picks.len() as f64);
        self.push(value, Op::NllMean(x, picks.into()), &[x])
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select_rows(rows);
        self.push(value, Op::GatherRows(x, rows.into()), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one input");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = DenseMatrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Message passing: `out[dst_e] += coef[e, h] * x[src_e]` for every edge,
    /// where head `h` owns the `h`-th contiguous block of `x`'s columns.
    /// `coef` is `E×heads`; the output has `n_out` rows.
    pub fn edge_aggregate(
        &mut self,
        x: Var,
        coef: Var,
        edges: Arc<EdgeIndex>,
        heads: usize,
        n_out: usize,
    ) -> Var {
        let (xv, cv) = (self.value(x), self.value(coef));
        assert_eq!(cv.rows(), edges.len(), "one coefficient row per edge");
        assert_eq!(cv.cols(), heads, "one coefficient column per head");
        assert_eq!(xv.cols() % heads, 0, "feature width must split into heads");
        let width = xv.cols() / heads;
        let mut value = DenseMatrix::zeros(n_out, xv.cols());
        for e in 0..edges.len() {
            let (s, d) = (edges.src[e], edges.dst[e]);
            for h in 0..heads {
                let w = cv.get(e, h);
                let src_row = &xv.row(s)[h * width..(h + 1) * width];
                let dst_row = &mut value.row_mut(d)[h * width..(h + 1) * width];
                for (o, &v) in dst_row.iter_mut().zip(src_row) {
                    *o += w * v;
                }
            }
        }
        self.push(
            value,
            Op::EdgeAggregate {
                x,
                coef,
                edges,
                heads,
            },
            &[x, coef],
        )
    }

    /// Per-head dot product of each row of `x` with `att` (`1×width`).
    pub fn head_dot(&mut self, x: Var, att: Var, heads: usize) -> Var {
        let (xv, av) = (self.value(x), self.value(att));
        assert_eq!(
            av.shape(),
            (1, xv.cols()),
            "attention vector width mismatch"
        );
        let width = xv.cols() / heads;
        let mut value = DenseMatrix::zeros(xv.rows(), heads);
        for r in 0..xv.rows() {
            for h in 0..heads {
                let span = h * width..(h + 1) * width;
                let dot = xv.row(r)[span.clone()]
                    .iter()
                    .zip(&av.row(0)[span])
                    .map(|(a, b)| a * b)
                    .sum();
                value.set(r, h, dot);
            }
        }
        self.push(value, Op::HeadDot { x, att, heads }, &[x, att])
    }

    /// Column-wise softmax over the rows sharing a group id (edges sharing a
    /// target node).
    pub fn segment_softmax(&mut self, x: Var, groups: &[usize], n_groups: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), groups.len(), "one group id per row");
        let cols = xv.cols();
        let mut max = DenseMatrix::filled(n_groups, cols, f64::NEG_INFINITY);
        for (r, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                if xv.get(r, c) > max.get(g, c) {
                    max.set(g, c, xv.get(r, c));
                }
            }
        }
        let mut value = DenseMatrix::zeros(xv.rows(), cols);
        let mut total = DenseMatrix::zeros(n_groups, cols);
        for (r, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                let e = (xv.get(r, c) - max.get(g, c)).exp();
                value.set(r, c, e);
                total.set(g, c, total.get(g, c) + e);
            }
        }
        for (r, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                value.set(r, c, value.get(r, c) / total.get(g, c));
            }
        }
        self.push(
            value,
            Op::SegmentSoftmax {
                x,
                groups: groups.into(),
                n_groups,
            },
            &[x],
        )
    }

    /// Inverted dropout with a precomputed keep mask already scaled by
    /// `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, scaled_mask: DenseMatrix) -> Var {
        assert_eq!(
            self.value(x).shape(),
            scaled_mask.shape(),
            "dropout mask shape mismatch"
        );
        let value = self.value(x).zip_map(&scaled_mask, |a, m| a * m);
        self.push(value, Op::Dropout(x, scaled_mask), &[x])
    }

    /// Vector-Jacobian product of the scalar `output` with respect to every
    /// recorded value.
    pub fn backward(&self, output: Var, mode: BackpropMode) -> Result<Gradients, ShapeError> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(ShapeError::new(format!(
                "backward needs a scalar output, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, mode, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], var: Var, delta: DenseMatrix) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node,
        g: &DenseMatrix,
        mode: BackpropMode,
        grads: &mut [Option<DenseMatrix>],
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gv, av| gv * av));
                }
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*b) {
                    let mut db = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let f = sv.get(r, 0);
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*s) {
                    let mut ds = DenseMatrix::zeros(sv.rows(), 1);
                    for r in 0..g.rows() {
                        let dot = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                        ds.set(r, 0, dot);
                    }
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |xv, gv| relu_backward(mode, xv, gv));
                self.accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |xv, gv| if xv > 0.0 { gv } else { slope * gv });
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = node.value.zip_map(g, |y, gv| gv * y * (1.0 - y));
                self.accumulate(grads, *x, dx);
            }
            Op::Log(x) => {
                let dx = self.value(*x).zip_map(g, |xv, gv| gv / xv);
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, DenseMatrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *x, DenseMatrix::filled(r, c, g.get(0, 0) / n));
            }
            Op::Select(x, row, col) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = DenseMatrix::zeros(r, c);
                dx.set(*row, *col, g.get(0, 0));
                self.accumulate(grads, *x, dx);
            }
            Op::NllMean(x, picks) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = DenseMatrix::zeros(r, c);
                let share = g.get(0, 0) / picks.len() as f64;
                for &(pr, pc) in picks.iter() {
                    dx.set(pr, pc, dx.get(pr, pc) - share);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherRows(x, rows) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = DenseMatrix::zeros(r, c);
                for (src, &dst) in rows.iter().enumerate() {
                    for (o, &v) in dx.row_mut(dst).iter_mut().zip(g.row(src)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.value(*p).shape();
                    if self.wants(*p) {
                        let mut dp = DenseMatrix::zeros(r, c);
                        for row in 0..r {
                            dp.row_mut(row)
                                .copy_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        self.accumulate(grads, *p, dp);
                    }
                    offset += c;
                }
            }
            Op::EdgeAggregate {
                x,
                coef,
                edges,
                heads,
            } => {
                let (xv, cv) = (self.value(*x), self.value(*coef));
                let width = xv.cols() / heads;
                let mut dx = self
                    .wants(*x)
                    .then(|| DenseMatrix::zeros(xv.rows(), xv.cols()));
                let mut dc = self
                    .wants(*coef)
                    .then(|| DenseMatrix::zeros(cv.rows(), cv.cols()));
                for e in 0..edges.len() {
                    let (s, d) = (edges.src[e], edges.dst[e]);
                    for h in 0..*heads {
                        let span = h * width..(h + 1) * width;
                        let g_row = &g.row(d)[span.clone()];
                        if let Some(dx) = dx.as_mut() {
                            let w = cv.get(e, h);
                            for (o, &gv) in dx.row_mut(s)[span.clone()].iter_mut().zip(g_row) {
                                *o += w * gv;
                            }
                        }
                        if let Some(dc) = dc.as_mut() {
                            let dot: f64 =
                                g_row.iter().zip(&xv.row(s)[span]).map(|(a, b)| a * b).sum();
                            dc.set(e, h, dc.get(e, h) + dot);
                        }
                    }
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dc) = dc {
                    self.accumulate(grads, *coef, dc);
                }
            }
            Op::HeadDot { x, att, heads } => {
                let (xv, av) = (self.value(*x), self.value(*att));
                let width = xv.cols() / heads;
                if self.wants(*x) {
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for c in 0..xv.cols() {
                            dx.set(r, c, g.get(r, c / width) * av.get(0, c));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*att) {
                    let mut da = DenseMatrix::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        for c in 0..xv.cols() {
                            da.set(0, c, da.get(0, c) + g.get(r, c / width) * xv.get(r, c));
                        }
                    }
                    self.accumulate(grads, *att, da);
                }
            }
            Op::SegmentSoftmax {
                x,
                groups,
                n_groups,
            } => {
                let y = &node.value;
                let cols = y.cols();
                let mut dots = DenseMatrix::zeros(*n_groups, cols);
                for (r, &grp) in groups.iter().enumerate() {
                    for c in 0..cols {
                        dots.set(grp, c, dots.get(grp, c) + g.get(r, c) * y.get(r, c));
                    }
                }
                let mut dx = DenseMatrix::zeros(y.rows(), cols);
                for (r, &grp) in groups.iter().enumerate() {
                    for c in 0..cols {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dots.get(grp, c)));
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Dropout(x, mask) => {
                self.accumulate(grads, *x, g.zip_map(mask, |gv, m| gv * m));
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

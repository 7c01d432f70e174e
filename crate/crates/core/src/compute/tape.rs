//! Reverse-mode differentiation over whole arrays.
//!
//! A [`Tape`] records every operation of one forward computation. Each
//! recorded node keeps its value; [`Tape::backward`] walks the nodes in
//! reverse creation order and accumulates adjoints into the parameter leaves.
//! A tape is single-use: one forward pass, one backward pass.

use std::sync::Arc;

use crate::compute::params::{GradientBundle, ParamId, ParameterSet};
use crate::compute::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::compute::Tensor;
use crate::error::{Error, Result};

/// Shared row-index list used by gather and segment operations.
pub type Index = Arc<[usize]>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Element-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(x))`, evaluated without overflow for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Normalizes a list of scores with the exponential function.
///
/// The maximum score is subtracted first; the result is unchanged by adding a
/// constant to every score.
pub fn exp_normalize(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    RowDot(Var, Var),
    Concat(Var, Var),
    ConcatRows(Var, Var),
    RowSlice(Var, usize),
    Gather(Var, Index),
    SegmentSum(Var, Index),
    Sigmoid(Var),
    Act(Var, Activation),
    ExpNormalize(Var, Index),
    NegLogSigmoid(Var),
    Sum(Var),
    SumSquares(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Leaf bound to a trainable array.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Result<Var> {
        self.push("param", params.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = Tensor::zeros(av.rows(), bv.cols());
        matmul_acc(av, bv, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.axpy(1.0, self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        out.axpy(-1.0, self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    /// Adds a `1 x C` row to every row of an `R x C` array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_bias", out, Op::AddBias(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let ng = self.needs(x);
        self.push("scale", out, Op::Scale(x, factor), ng)
    }

    /// Multiplies row `e` of `x` by `weights[e]` (`weights` is `R x 1`).
    pub fn scale_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weights));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(shape_err(
                "scale_rows",
                format!("{:?} by weights {:?}", xv.shape(), wv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let w = wv.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
        let ng = self.needs(x) || self.needs(weights);
        self.push("scale_rows", out, Op::ScaleRows(x, weights), ng)
    }

    /// Row-wise inner products of two equally shaped arrays, as a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let values = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push("row_dot", Tensor::column(values), Op::RowDot(a, b), ng)
    }

    /// Column-wise concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err(
                "concat",
                format!("{:?} beside {:?}", av.shape(), bv.shape()),
            ));
        }
        let cols = av.cols() + bv.cols();
        let mut out = Tensor::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("concat", out, Op::Concat(a, b), ng)
    }

    /// Row-wise stacking of `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err(
                "concat_rows",
                format!("{:?} above {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.as_slice());
        data.extend_from_slice(bv.as_slice());
        let out = Tensor::from_vec(av.rows() + bv.rows(), av.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("concat_rows", out, Op::ConcatRows(a, b), ng)
    }

    /// Rows `start..start + len` of `x`.
    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(shape_err(
                "row_slice",
                format!("rows {start}..{} of {:?}", start + len, xv.shape()),
            ));
        }
        let cols = xv.cols();
        let data = xv.as_slice()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data)?;
        let ng = self.needs(x);
        self.push("row_slice", out, Op::RowSlice(x, start), ng)
    }

    /// Output row `e` is row `index[e]` of `x`.
    pub fn row_gather(&mut self, x: Var, index: &Index) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = Tensor::zeros(index.len(), cols);
        for (e, &r) in index.iter().enumerate() {
            if r >= xv.rows() {
                return Err(shape_err(
                    "row_gather",
                    format!("row {r} out of {} rows", xv.rows()),
                ));
            }
            out.row_mut(e).copy_from_slice(xv.row(r));
        }
        let ng = self.needs(x);
        self.push("row_gather", out, Op::Gather(x, index.clone()), ng)
    }

    /// Output row `s` is the sum of the rows `e` of `x` with `segments[e] == s`.
    pub fn segment_sum(&mut self, x: Var, segments: &Index, num_segments: usize) -> Result<Var> {
        let xv = self.value(x);
        if segments.len() != xv.rows() {
            return Err(shape_err(
                "segment_sum",
                format!("{} segment ids for {} rows", segments.len(), xv.rows()),
            ));
        }
        let mut out = Tensor::zeros(num_segments, xv.cols());
        for (e, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(shape_err(
                    "segment_sum",
                    format!("segment {s} out of {num_segments}"),
                ));
            }
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(e)) {
                *o += v;
            }
        }
        let ng = self.needs(x);
        self.push("segment_sum", out, Op::SegmentSum(x, segments.clone()), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push("sigmoid", out, Op::Sigmoid(x), ng)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(x);
        }
        let out = self.value(x).map(|v| act.apply(v));
        let ng = self.needs(x);
        self.push("activation", out, Op::Act(x, act), ng)
    }

    /// Exponential normalization of a score column within each segment.
    pub fn exp_normalize(&mut self, scores: Var, segments: &Index, num_segments: usize) -> Result<Var> {
        let sv = self.value(scores);
        if sv.cols() != 1 || sv.rows() != segments.len() {
            return Err(shape_err(
                "exp_normalize",
                format!("scores {:?} with {} segment ids", sv.shape(), segments.len()),
            ));
        }
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (e, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(shape_err(
                    "exp_normalize",
                    format!("segment {s} out of {num_segments}"),
                ));
            }
            max[s] = max[s].max(sv.get(e, 0));
        }
        let mut exps: Vec<f64> = segments
            .iter()
            .enumerate()
            .map(|(e, &s)| (sv.get(e, 0) - max[s]).exp())
            .collect();
        let mut total = vec![0.0; num_segments];
        for (e, &s) in segments.iter().enumerate() {
            total[s] += exps[e];
        }
        for (e, &s) in segments.iter().enumerate() {
            exps[e] /= total[s];
        }
        let ng = self.needs(scores);
        self.push(
            "exp_normalize",
            Tensor::column(exps),
            Op::ExpNormalize(scores, segments.clone()),
            ng,
        )
    }

    pub fn neg_log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(neg_log_sigmoid);
        let ng = self.needs(x);
        self.push("neg_log_sigmoid", out, Op::NegLogSigmoid(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push("sum", out, Op::Sum(x), ng)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).squared_norm());
        let ng = self.needs(x);
        self.push("sum_squares", out, Op::SumSquares(x), ng)
    }

    /// Propagates the gradient of the scalar `loss` back to every parameter
    /// leaf. Arrays never touched by the recording get zero gradients.
    pub fn backward(&mut self, loss: Var, params: &ParameterSet) -> Result<GradientBundle> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        self.consumed = true;
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(shape_err("backward", format!("loss has shape {:?}", lv.shape())));
        }

        let mut bundle = params.zeros_like();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let needs = |v: Var| nodes[v.0].needs_grad;
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            };

            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let target = bundle.get_mut(*id);
                    if target.shape() != g.shape() {
                        return Err(shape_err(
                            "backward",
                            format!("{}: {:?} vs {:?}", params.name(*id), target.shape(), g.shape()),
                        ));
                    }
                    target.axpy(1.0, &g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if needs(*a) {
                        let mut da = Tensor::zeros(av.rows(), av.cols());
                        matmul_bt_acc(&g, bv, &mut da);
                        acc(*a, da);
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(bv.rows(), bv.cols());
                        matmul_at_acc(av, &g, &mut db);
                        acc(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(*a, g.clone());
                    }
                    if needs(*b) {
                        acc(*b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(*b, g.map(|v| -v));
                    }
                    if needs(*a) {
                        acc(*a, g);
                    }
                }
                Op::AddBias(x, bias) => {
                    if needs(*bias) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        acc(*bias, db);
                    }
                    if needs(*x) {
                        acc(*x, g);
                    }
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    acc(*x, g.map(|v| v * f));
                }
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (val(*x), val(*w));
                    if needs(*w) {
                        let dw = (0..g.rows())
                            .map(|r| g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum())
                            .collect();
                        acc(*w, Tensor::column(dw));
                    }
                    if needs(*x) {
                        let mut dx = g;
                        for r in 0..dx.rows() {
                            let s = wv.get(r, 0);
                            dx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                        }
                        acc(*x, dx);
                    }
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let scaled = |other: &Tensor| {
                        let mut out = other.clone();
                        for r in 0..out.rows() {
                            let s = g.get(r, 0);
                            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
                        }
                        out
                    };
                    if needs(*a) {
                        acc(*a, scaled(bv));
                    }
                    if needs(*b) {
                        acc(*b, scaled(av));
                    }
                }
                Op::Concat(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    if needs(*a) {
                        let mut da = Tensor::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        acc(*a, da);
                    }
                    if needs(*b) {
                        let mut db = Tensor::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        acc(*b, db);
                    }
                }
                Op::ConcatRows(a, b) => {
                    let ra = val(*a).rows();
                    let cols = g.cols();
                    let data = g.into_vec();
                    if needs(*a) {
                        acc(*a, Tensor::from_vec(ra, cols, data[..ra * cols].to_vec())?);
                    }
                    if needs(*b) {
                        let rb = data.len() / cols.max(1) - ra;
                        acc(*b, Tensor::from_vec(rb, cols, data[ra * cols..].to_vec())?);
                    }
                }
                Op::RowSlice(x, start) => {
                    let xv = val(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let cols = xv.cols();
                    dx.as_mut_slice()[start * cols..start * cols + g.len()]
                        .copy_from_slice(g.as_slice());
                    acc(*x, dx);
                }
                Op::Gather(x, index) => {
                    let xv = val(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (e, &r) in index.iter().enumerate() {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(e)) {
                            *d += v;
                        }
                    }
                    acc(*x, dx);
                }
                Op::SegmentSum(x, segments) => {
                    let mut dx = Tensor::zeros(segments.len(), g.cols());
                    for (e, &s) in segments.iter().enumerate() {
                        dx.row_mut(e).copy_from_slice(g.row(s));
                    }
                    acc(*x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let dx = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(y.as_slice())
                            .map(|(gv, yv)| gv * yv * (1.0 - yv))
                            .collect(),
                    )?;
                    acc(*x, dx);
                }
                Op::Act(x, act) => {
                    let xv = val(*x);
                    let dx = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(xv.as_slice())
                            .map(|(gv, xv)| gv * act.derivative(*xv))
                            .collect(),
                    )?;
                    acc(*x, dx);
                }
                Op::ExpNormalize(x, segments) => {
                    let y = &node.value;
                    let num_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut weighted = vec![0.0; num_segments];
                    for (e, &s) in segments.iter().enumerate() {
                        weighted[s] += y.get(e, 0) * g.get(e, 0);
                    }
                    let dx = segments
                        .iter()
                        .enumerate()
                        .map(|(e, &s)| y.get(e, 0) * (g.get(e, 0) - weighted[s]))
                        .collect();
                    acc(*x, Tensor::column(dx));
                }
                Op::NegLogSigmoid(x) => {
                    let xv = val(*x);
                    let dx = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(xv.as_slice())
                            .map(|(gv, xv)| gv * (sigmoid(*xv) - 1.0))
                            .collect(),
                    )?;
                    acc(*x, dx);
                }
                Op::Sum(x) => {
                    let xv = val(*x);
                    acc(*x, Tensor::full(xv.rows(), xv.cols(), g.get(0, 0)));
                }
                Op::SumSquares(x) => {
                    let s = 2.0 * g.get(0, 0);
                    acc(*x, val(*x).map(|v| s * v));
                }
            }
        }
        if !bundle.is_finite() {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(v: &[usize]) -> Index {
        v.to_vec().into()
    }

    #[test]
    fn exp_normalize_examples() {
        assert_eq!(exp_normalize(&[0.0, 0.0]), vec![0.5, 0.5]);
        let w = exp_normalize(&[2f64.ln(), 0.0]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(exp_normalize(&[5.0]), vec![1.0]);
        // huge scores do not overflow
        let w = exp_normalize(&[1000.0, 1000.0]);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut params = ParameterSet::new();
        let p = params.push("p", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let q = params.push("q", Tensor::full(3, 2, 0.5));
        let mut tape = Tape::new();
        let pv = tape.param(&params, p).unwrap();
        let loss = tape.sum(pv).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get(p), &Tensor::full(2, 2, 1.0));
        assert_eq!(grads.get(q), &Tensor::zeros(3, 2));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut params = ParameterSet::new();
        let x = params.push("x", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let xv = tape.param(&params, x).unwrap();
        let y = tape.sigmoid(xv).unwrap();
        let grads = tape.backward(y, &params).unwrap();
        assert_eq!(grads.get(x).get(0, 0), 0.25);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut params = ParameterSet::new();
        let x = params.push("x", Tensor::scalar(1.0));
        let mut tape = Tape::new();
        let xv = tape.param(&params, x).unwrap();
        let y = tape.sum(xv).unwrap();
        tape.backward(y, &params).unwrap();
        assert!(matches!(tape.backward(y, &params), Err(Error::BackwardTwice)));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3)).unwrap();
        let b = tape.constant(Tensor::zeros(2, 3)).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(Tensor::zeros(3, 2)).unwrap();
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn non_finite_output_raises() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(f64::MAX)).unwrap();
        assert!(matches!(tape.scale(a, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn segment_softmax_groups() {
        let mut tape = Tape::new();
        let s = tape
            .constant(Tensor::column(vec![0.0, 2f64.ln(), 0.0, 7.0]))
            .unwrap();
        let w = tape.exp_normalize(s, &idx(&[1, 0, 0, 2]), 3).unwrap();
        let v = tape.value(w).as_slice();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn gather_then_segment_sum_roundtrip() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap())
            .unwrap();
        let g = tape.row_gather(x, &idx(&[0, 1, 1])).unwrap();
        let s = tape.segment_sum(g, &idx(&[0, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(s).as_slice(), &[1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn neg_log_sigmoid_is_stable() {
        assert!((neg_log_sigmoid(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
    }
}

//! Reverse-mode differentiation over batched 2-D arrays.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with
//! the forward value. [`Tape::backward`] walks the record in reverse and
//! accumulates exact gradients for every node that depends on a parameter.
//! Values are `rows × cols` matrices; row vectors (`1 × m`) broadcast over
//! the batch in [`Tape::add_row`].

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Parameter,
    MatMulT(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Softplus(usize),
    Square(usize),
    SoftmaxGroups(usize, usize),
    LogSoftmaxGroups(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax over consecutive groups of `width` columns.
pub(crate) fn softmax_groups(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let mut out = x.as_standard_layout().to_owned();
    for mut row in out.rows_mut() {
        for group in row.as_slice_mut().expect("contiguous row").chunks_mut(width) {
            let max = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in group.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in group.iter_mut() {
                *v /= total;
            }
        }
    }
    out
}

pub(crate) fn log_softmax_groups(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let mut out = x.as_standard_layout().to_owned();
    for mut row in out.rows_mut() {
        for group in row.as_slice_mut().expect("contiguous row").chunks_mut(width) {
            let max = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + group.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in group.iter_mut() {
                *v -= lse;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Parameter => true,
            Op::MatMulT(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => self.nodes[*a].needs_grad || self.nodes[*b].needs_grad,
            Op::Concat(parts) => parts.iter().any(|&p| self.nodes[p].needs_grad),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::SoftmaxGroups(a, _)
            | Op::LogSoftmaxGroups(a, _)
            | Op::Slice(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => self.nodes[*a].needs_grad,
        };
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// A value gradients do not flow into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// A leaf that receives a gradient.
    pub fn parameter(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Parameter)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// `x · wᵀ` for `x: n×k`, `w: m×k`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xi, wi) = (self.idx(x), self.idx(w));
        let (xv, wv) = (&self.nodes[xi].value, &self.nodes[wi].value);
        assert_eq!(xv.ncols(), wv.ncols(), "matmul_t inner dimension");
        let value = xv.dot(&wv.t());
        self.push(value, Op::MatMulT(xi, wi))
    }

    /// `x + bias` with a `1×m` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xi, bi) = (self.idx(x), self.idx(bias));
        let (xv, bv) = (&self.nodes[xi].value, &self.nodes[bi].value);
        assert_eq!(bv.nrows(), 1, "bias must be a row vector");
        assert_eq!(xv.ncols(), bv.ncols(), "bias width");
        let value = xv + bv;
        self.push(value, Op::AddRow(xi, bi))
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) {
        assert_eq!(
            self.nodes[a].value.dim(),
            self.nodes[b].value.dim(),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        self.same_shape(ai, bi, "add");
        let value = &self.nodes[ai].value + &self.nodes[bi].value;
        self.push(value, Op::Add(ai, bi))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        self.same_shape(ai, bi, "sub");
        let value = &self.nodes[ai].value - &self.nodes[bi].value;
        self.push(value, Op::Sub(ai, bi))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        self.same_shape(ai, bi, "mul");
        let value = &self.nodes[ai].value * &self.nodes[bi].value;
        self.push(value, Op::Mul(ai, bi))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ai = self.idx(a);
        let value = &self.nodes[ai].value * factor;
        self.push(value, Op::Scale(ai, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let ai = self.idx(a);
        let value = &self.nodes[ai].value + shift;
        self.push(value, Op::Offset(ai))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let ai = self.idx(a);
        let value = self.nodes[ai].value.mapv(f);
        self.push(value, op(ai))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp)
    }

    /// `ln(1 + e^x)`, overflow-safe.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |v| v * v, Op::Square)
    }

    /// Softmax within each consecutive group of `width` columns.
    pub fn softmax_groups(&mut self, a: Var, width: usize) -> Var {
        let ai = self.idx(a);
        assert!(width > 0 && self.nodes[ai].value.ncols() % width == 0, "group width");
        let value = softmax_groups(&self.nodes[ai].value, width);
        self.push(value, Op::SoftmaxGroups(ai, width))
    }

    pub fn log_softmax_groups(&mut self, a: Var, width: usize) -> Var {
        let ai = self.idx(a);
        assert!(width > 0 && self.nodes[ai].value.ncols() % width == 0, "group width");
        let value = log_softmax_groups(&self.nodes[ai].value, width);
        self.push(value, Op::LogSoftmaxGroups(ai, width))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let views: Vec<_> = idx.iter().map(|&i| self.nodes[i].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(value, Op::Concat(idx))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let ai = self.idx(a);
        let value = self.nodes[ai].value.slice(s![.., start..end]).to_owned();
        self.push(value, Op::Slice(ai, start))
    }

    /// Sum of all entries, as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let value = Array2::from_elem((1, 1), self.nodes[ai].value.sum());
        self.push(value, Op::Sum(ai))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let v = &self.nodes[ai].value;
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::Mean(ai))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::LossNotOnTape);
        }
        if self.nodes[loss.index].value.dim() != (1, 1) {
            return Err(Error::ShapeMismatch {
                context: "backward loss",
                expected: "1x1".into(),
                actual: format!("{:?}", self.nodes[loss.index].value.dim()),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Parameter) && grads[i].is_none() {
                grads[i] = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, i: usize, gy: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |target: usize, g: Array2<f64>| {
            if !nodes[target].needs_grad {
                return;
            }
            match &mut grads[target] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        let y = &nodes[i].value;
        let needs = |j: usize| nodes[j].needs_grad;
        match &nodes[i].op {
            Op::Constant | Op::Parameter => {}
            Op::MatMulT(x, w) => {
                if needs(*x) {
                    acc(*x, gy.dot(&nodes[*w].value));
                }
                if needs(*w) {
                    acc(*w, gy.t().dot(&nodes[*x].value));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, gy.clone());
                if needs(*b) {
                    acc(*b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, -gy);
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, gy * &nodes[*b].value);
                }
                if needs(*b) {
                    acc(*b, gy * &nodes[*a].value);
                }
            }
            Op::Scale(a, factor) => acc(*a, gy * *factor),
            Op::Offset(a) => acc(*a, gy.clone()),
            Op::Relu(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g)
                    .and(&nodes[*a].value)
                    .for_each(|g, &x| if x <= 0.0 { *g = 0.0 });
                acc(*a, g);
            }
            Op::Tanh(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g).and(y).for_each(|g, &t| *g *= 1.0 - t * t);
                acc(*a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g).and(y).for_each(|g, &s| *g *= s * (1.0 - s));
                acc(*a, g);
            }
            Op::Exp(a) => acc(*a, gy * y),
            Op::Softplus(a) => {
                let mut g = gy.clone();
                Zip::from(&mut g)
                    .and(&nodes[*a].value)
                    .for_each(|g, &x| *g *= sigmoid(x));
                acc(*a, g);
            }
            Op::Square(a) => acc(*a, gy * &nodes[*a].value * 2.0),
            Op::SoftmaxGroups(a, width) => {
                let mut g = gy.as_standard_layout().to_owned();
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                    let gs = grow.as_slice_mut().expect("contiguous");
                    let ys = yrow.to_vec();
                    for (gg, yy) in gs.chunks_mut(*width).zip(ys.chunks(*width)) {
                        let dot: f64 = gg.iter().zip(yy).map(|(a, b)| a * b).sum();
                        for (g, &y) in gg.iter_mut().zip(yy) {
                            *g = y * (*g - dot);
                        }
                    }
                }
                acc(*a, g);
            }
            Op::LogSoftmaxGroups(a, width) => {
                let mut g = gy.as_standard_layout().to_owned();
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                    let gs = grow.as_slice_mut().expect("contiguous");
                    let ys = yrow.to_vec();
                    for (gg, yy) in gs.chunks_mut(*width).zip(ys.chunks(*width)) {
                        let total: f64 = gg.iter().sum();
                        for (g, &ly) in gg.iter_mut().zip(yy) {
                            *g -= ly.exp() * total;
                        }
                    }
                }
                acc(*a, g);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = nodes[p].value.ncols();
                    if needs(p) {
                        acc(p, gy.slice(s![.., start..start + width]).to_owned());
                    }
                    start += width;
                }
            }
            Op::Slice(a, start) => {
                let mut g = Array2::zeros(nodes[*a].value.dim());
                g.slice_mut(s![.., *start..*start + gy.ncols()]).assign(gy);
                acc(*a, g);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(nodes[*a].value.dim(), gy[[0, 0]])),
            Op::Mean(a) => {
                let n = nodes[*a].value.len() as f64;
                acc(*a, Array2::from_elem(nodes[*a].value.dim(), gy[[0, 0]] / n));
            }
        }
    }
}

/// Result of [`Tape::backward`]. Every parameter leaf has an entry (zeros
/// when the loss does not depend on it); constants have none.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients> {
    tape.backward(loss)
}

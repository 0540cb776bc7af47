//! Static computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, which is already a valid
//! topological order: an op can only reference nodes that exist. Shapes are
//! resolved at `forward` time so one graph serves every batch size.

use std::collections::{BTreeMap, HashMap};

use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{LsboError, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Square,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Square => "square",
            Unary::Softplus => "softplus",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Square => x * x,
            Unary::Softplus => softplus(x),
        }
    }

    /// Derivative given the input `x` and the cached output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Softplus => sigmoid(x),
        }
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

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(ParamId),
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Unary(NodeId, Unary),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    Concat(NodeId, NodeId),
    Slice(NodeId, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Unary(_, u) => u.name(),
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    values: Vec<Option<Tensor>>,
    param_nodes: HashMap<ParamId, NodeId>,
    outputs: Vec<(String, NodeId)>,
}

fn shape_err(op: &'static str, detail: String) -> LsboError {
    LsboError::Shape { op, detail }
}

/// Broadcast-compatible shapes for add/sub: identical, or `rhs` is one row
/// matching `lhs`'s column count.
fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    (a.rows() == b.rows() && a.cols() == b.cols()) || (b.rows() == 1 && a.cols() == b.cols())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let needs = match &op {
            Op::Input(_) | Op::Constant(_) => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => {
                self.needs_grad[a.0] || self.needs_grad[b.0]
            }
            Op::Scale(a, _)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::Slice(a, ..) => self.needs_grad[a.0],
        };
        self.ops.push(op);
        self.needs_grad.push(needs);
        self.values.push(None);
        NodeId(self.ops.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(Op::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> NodeId {
        self.push(Op::Unary(a, f))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Square)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Softplus)
    }

    /// Sum of all elements, as a `1×1` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Per-row sum: `m×n` → `m×1`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumRows(a))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat(a, b))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice(a, start, end))
    }

    /// Register a named output returned by [`Graph::forward`].
    pub fn output(&mut self, name: impl Into<String>, node: NodeId) {
        self.outputs.push((name.into(), node));
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values[node.0].as_ref()
    }

    fn val(&self, node: NodeId) -> &Tensor {
        self.values[node.0]
            .as_ref()
            .expect("parents are evaluated before children")
    }

    /// Evaluate every node. Returns the registered outputs.
    pub fn forward(
        &mut self,
        params: &ParamSet,
        inputs: &[(&str, &Tensor)],
    ) -> Result<BTreeMap<String, Tensor>> {
        self.values.iter_mut().for_each(|v| *v = None);
        let bound: HashMap<&str, &Tensor> = inputs.iter().copied().collect();
        for i in 0..self.ops.len() {
            let value = self.eval_node(i, params, &bound)?;
            if !value.is_finite() {
                self.values.iter_mut().for_each(|v| *v = None);
                return Err(LsboError::NonFinite {
                    op: self.ops[i].name().to_string(),
                });
            }
            self.values[i] = Some(value);
        }
        Ok(self
            .outputs
            .iter()
            .map(|(n, id)| (n.clone(), self.val(*id).clone()))
            .collect())
    }

    fn eval_node(
        &self,
        i: usize,
        params: &ParamSet,
        bound: &HashMap<&str, &Tensor>,
    ) -> Result<Tensor> {
        let out = match &self.ops[i] {
            Op::Input(name) => {
                let t = bound
                    .get(name.as_str())
                    .ok_or_else(|| LsboError::MissingInput(name.clone()))?;
                Tensor::matrix(t.rows(), t.cols(), t.data().to_vec())
            }
            Op::Param(id) => {
                if id.0 >= params.len() {
                    return Err(LsboError::invalid(format!("parameter {} not in set", id.0)));
                }
                let t = params.get(*id);
                Tensor::matrix(t.rows(), t.cols(), t.data().to_vec())
            }
            Op::Constant(t) => Tensor::matrix(t.rows(), t.cols(), t.data().to_vec()),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.cols() != b.rows() {
                    return Err(shape_err(
                        "matmul",
                        format!("{}x{} · {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
                let mut out = vec![0.0; a.rows() * b.cols()];
                linalg::matmul(a.data(), b.data(), a.rows(), a.cols(), b.cols(), &mut out);
                Tensor::matrix(a.rows(), b.cols(), out)
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.ops[i], Op::Add(..)) { 1.0 } else { -1.0 };
                let (a, b) = (self.val(*a), self.val(*b));
                if !broadcast_ok(a, b) {
                    return Err(shape_err(
                        "add",
                        format!("{}x{} ± {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
                let c = a.cols();
                let bd = b.data();
                let data = if b.rows() == a.rows() {
                    a.data().iter().zip(bd).map(|(x, y)| x + sign * y).collect()
                } else {
                    a.data()
                        .iter()
                        .enumerate()
                        .map(|(k, x)| x + sign * bd[k % c])
                        .collect()
                };
                Tensor::matrix(a.rows(), c, data)
            }
            Op::Mul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.rows() != b.rows() || a.cols() != b.cols() {
                    return Err(shape_err(
                        "mul",
                        format!("{}x{} ⊙ {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
                    ));
                }
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Tensor::matrix(a.rows(), a.cols(), data)
            }
            Op::Scale(a, f) => {
                let a = self.val(*a);
                Tensor::matrix(a.rows(), a.cols(), a.data().iter().map(|x| x * f).collect())
            }
            Op::Unary(a, f) => {
                let a = self.val(*a);
                Tensor::matrix(
                    a.rows(),
                    a.cols(),
                    a.data().iter().map(|&x| f.apply(x)).collect(),
                )
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Mean(a) => {
                let a = self.val(*a);
                if a.is_empty() {
                    return Err(shape_err("mean", "empty tensor".into()));
                }
                Tensor::scalar(a.sum() / a.len() as f64)
            }
            Op::SumRows(a) => {
                let a = self.val(*a);
                let data = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
                Tensor::matrix(a.rows(), 1, data)
            }
            Op::Concat(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.rows() != b.rows() {
                    return Err(shape_err(
                        "concat",
                        format!("row counts {} and {}", a.rows(), b.rows()),
                    ));
                }
                let mut data = Vec::with_capacity(a.len() + b.len());
                for r in 0..a.rows() {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Tensor::matrix(a.rows(), a.cols() + b.cols(), data)
            }
            Op::Slice(a, start, end) => {
                let a = self.val(*a);
                if start >= end || *end > a.cols() {
                    return Err(shape_err(
                        "slice",
                        format!("columns {start}..{end} of {}", a.cols()),
                    ));
                }
                let mut data = Vec::with_capacity(a.rows() * (end - start));
                for r in 0..a.rows() {
                    data.extend_from_slice(&a.row(r)[*start..*end]);
                }
                Tensor::matrix(a.rows(), end - start, data)
            }
        };
        Ok(out)
    }

    /// Gradients of the scalar `loss` with respect to every parameter in a
    /// set of `n_params` tensors. Parameters the loss does not touch get
    /// zero gradients.
    pub fn backward(&self, loss: NodeId, params: &ParamSet) -> Result<Gradients> {
        let loss_val = self.values[loss.0].as_ref().ok_or(LsboError::ForwardNotRun)?;
        if loss_val.len() != 1 {
            return Err(LsboError::NotScalar(loss_val.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.needs_grad[i] {
                continue;
            }
            match &self.ops[i] {
                Op::Input(_) | Op::Constant(_) => {}
                Op::Param(id) => {
                    let dst = grads[id.0].data_mut();
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.needs_grad[a.0] {
                        let mut da = vec![0.0; m * k];
                        linalg::matmul_nt(g.data(), bv.data(), m, n, k, &mut da);
                        accumulate(&mut adj, *a, Tensor::matrix(m, k, da));
                    }
                    if self.needs_grad[b.0] {
                        let mut db = vec![0.0; k * n];
                        linalg::matmul_tn(av.data(), g.data(), m, k, n, &mut db);
                        accumulate(&mut adj, *b, Tensor::matrix(k, n, db));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(self.ops[i], Op::Add(..)) { 1.0 } else { -1.0 };
                    if self.needs_grad[a.0] {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.needs_grad[b.0] {
                        let bv = self.val(*b);
                        let db = if bv.rows() == g.rows() {
                            g.map(|x| sign * x)
                        } else {
                            let c = g.cols();
                            let mut col = vec![0.0; c];
                            for r in 0..g.rows() {
                                for (acc, x) in col.iter_mut().zip(g.row(r)) {
                                    *acc += x;
                                }
                            }
                            Tensor::matrix(1, c, col.into_iter().map(|x| sign * x).collect())
                        };
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    if self.needs_grad[a.0] {
                        let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, *a, Tensor::matrix(g.rows(), g.cols(), d));
                    }
                    if self.needs_grad[b.0] {
                        let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, *b, Tensor::matrix(g.rows(), g.cols(), d));
                    }
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.map(|x| x * f)),
                Op::Unary(a, f) => {
                    let (xv, yv) = (self.val(*a), self.val(NodeId(i)));
                    let d = g
                        .data()
                        .iter()
                        .zip(xv.data().iter().zip(yv.data()))
                        .map(|(gv, (&x, &y))| gv * f.derivative(x, y))
                        .collect();
                    accumulate(&mut adj, *a, Tensor::matrix(g.rows(), g.cols(), d));
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let av = self.val(*a);
                    let scale = if matches!(self.ops[i], Op::Mean(_)) {
                        1.0 / av.len() as f64
                    } else {
                        1.0
                    };
                    let v = g.data()[0] * scale;
                    accumulate(&mut adj, *a, Tensor::full(&[av.rows(), av.cols()], v));
                }
                Op::SumRows(a) => {
                    let av = self.val(*a);
                    let c = av.cols();
                    let mut d = Vec::with_capacity(av.len());
                    for r in 0..av.rows() {
                        d.extend(std::iter::repeat_n(g.data()[r], c));
                    }
                    accumulate(&mut adj, *a, Tensor::matrix(av.rows(), c, d));
                }
                Op::Concat(a, b) => {
                    let ca = self.val(*a).cols();
                    let cb = self.val(*b).cols();
                    let rows = g.rows();
                    if self.needs_grad[a.0] {
                        let mut d = Vec::with_capacity(rows * ca);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut adj, *a, Tensor::matrix(rows, ca, d));
                    }
                    if self.needs_grad[b.0] {
                        let mut d = Vec::with_capacity(rows * cb);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut adj, *b, Tensor::matrix(rows, cb, d));
                    }
                }
                Op::Slice(a, start, end) => {
                    let av = self.val(*a);
                    let mut d = Tensor::zeros(&[av.rows(), av.cols()]);
                    for r in 0..av.rows() {
                        d.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *a, d);
                }
            }
        }
        Ok(Gradients::from_vec(grads))
    }
}

fn accumulate(adj: &mut [Option<Tensor>], node: NodeId, g: Tensor) {
    match &mut adj[node.0] {
        Some(existing) => {
            for (x, y) in existing.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

//! Reverse-mode automatic differentiation over dense [`Tensor`]s.
//!
//! A [`Graph`] is built once per minibatch: leaves are declared by name
//! (either bound to a value at construction, like parameters, or supplied
//! at [`Graph::forward`] time, like data), and every op appends a node
//! whose inputs are earlier nodes. Node order is therefore a topological
//! order, and [`Graph::backward`] walks it in reverse exactly once.
//!
//! ```
//! use iae_lab::autodiff::Graph;
//! use iae_lab::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.input("x");
//! let y = g.mul(x, x);
//! let s = g.sum(y);
//! g.forward(&[("x", &Tensor::scalar(3.0))]).unwrap();
//! let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { name: String, bound: Option<Tensor> },
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    SoftmaxRows(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    ConcatCols(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    SoftmaxCrossEntropy(NodeId, NodeId),
    StopGrad(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Abs(_) => "abs",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxCrossEntropy(..) => "softmax_cross_entropy",
            Op::StopGrad(_) => "stop_grad",
        }
    }
}

/// Recorded computation: an append-only list of primitive ops plus the
/// node values of the most recent forward pass.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Option<Tensor>>,
    leaves: HashMap<String, NodeId>,
    needs_grad: Vec<bool>,
    evaluated: bool,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let needs = match &op {
            Op::Leaf { .. } => true,
            Op::Constant(_) | Op::StopGrad(_) => false,
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs_grad[p.0]),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::SoftmaxCrossEntropy(a, b) => self.needs_grad[a.0] || self.needs_grad[b.0],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a) => self.needs_grad[a.0],
        };
        self.needs_grad.push(needs);
        self.ops.push(op);
        self.values.push(None);
        self.evaluated = false;
        NodeId(self.ops.len() - 1)
    }

    fn push_leaf(&mut self, name: &str, bound: Option<Tensor>) -> NodeId {
        assert!(!self.leaves.contains_key(name), "duplicate leaf name `{name}`");
        let id = self.push(Op::Leaf { name: name.to_string(), bound });
        self.leaves.insert(name.to_string(), id);
        id
    }

    /// A named leaf whose value is supplied to [`Graph::forward`].
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push_leaf(name, None)
    }

    /// A named leaf bound to a value now; inputs with the same name passed
    /// to [`Graph::forward`] override it.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push_leaf(name, Some(value))
    }

    /// An unnamed value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    /// Adds a `1 × cols` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        self.push(Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SoftmaxRows(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Mean over rows of `-Σ_j target_j · log softmax(logits)_j`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy(logits, target))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        self.push(Op::StopGrad(a))
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.ops.iter().filter_map(|op| match op {
            Op::Leaf { name, .. } => Some(name.as_str()),
            _ => None,
        })
    }

    /// Rebinds a named leaf's stored value.
    pub fn set_leaf(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.leaf(name).ok_or_else(|| Error::UnboundInput(name.to_string()))?;
        if let Op::Leaf { bound, .. } = &mut self.ops[id.0] {
            *bound = Some(value);
        }
        self.evaluated = false;
        Ok(())
    }

    /// Value of `node` from the last forward pass.
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node.0).and_then(Option::as_ref)
    }

    fn val(&self, node: NodeId) -> &Tensor {
        self.values[node.0].as_ref().expect("inputs precede their consumers")
    }

    /// Evaluates every node. Named `inputs` take precedence over values
    /// bound with [`Graph::param`].
    pub fn forward(&mut self, inputs: &[(&str, &Tensor)]) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.ops.len() {
            let value = self.eval_node(i, inputs)?;
            if !value.is_finite() {
                return Err(Error::Domain {
                    node: i,
                    op: self.ops[i].name(),
                    detail: "non-finite value".into(),
                });
            }
            self.values[i] = Some(value);
        }
        self.evaluated = true;
        Ok(())
    }

    fn eval_node(&self, i: usize, inputs: &[(&str, &Tensor)]) -> Result<Tensor> {
        let op = &self.ops[i];
        let shape_err = |detail: String| Error::NodeShape { node: i, op: op.name(), detail };
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())))
            } else {
                Ok(())
            }
        };
        Ok(match op {
            Op::Leaf { name, bound } => {
                if let Some((_, t)) = inputs.iter().find(|(n, _)| n == name) {
                    (*t).clone()
                } else if let Some(t) = bound {
                    t.clone()
                } else {
                    return Err(Error::UnboundInput(name.clone()));
                }
            }
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                if a.cols() != b.rows() {
                    return Err(shape_err(format!("{:?} · {:?}", a.shape(), b.shape())));
                }
                a.matmul(b)?
            }
            Op::AddBias(x, b) => {
                let (x, b) = (self.val(*x), self.val(*b));
                if b.rows() != 1 || b.cols() != x.cols() {
                    return Err(shape_err(format!("bias {:?} for input {:?}", b.shape(), x.shape())));
                }
                let mut out = x.clone();
                let c = x.cols();
                for (k, v) in out.data_mut().iter_mut().enumerate() {
                    *v += b.data()[k % c];
                }
                out
            }
            Op::Add(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                same_shape(a, b)?;
                a.zip_map(b, |x, y| x + y)
            }
            Op::Sub(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                same_shape(a, b)?;
                a.zip_map(b, |x, y| x - y)
            }
            Op::Mul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                same_shape(a, b)?;
                a.zip_map(b, |x, y| x * y)
            }
            Op::Div(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                same_shape(a, b)?;
                if b.data().contains(&0.0) {
                    return Err(Error::Domain { node: i, op: "div", detail: "division by zero".into() });
                }
                a.zip_map(b, |x, y| x / y)
            }
            Op::Scale(a, k) => self.val(*a).scale(*k),
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Sigmoid(a) => self.val(*a).map(sigmoid),
            Op::LogSigmoid(a) => self.val(*a).map(log_sigmoid),
            Op::SoftmaxRows(a) => {
                let a = self.val(*a);
                let mut out = Tensor::zeros(a.rows(), a.cols());
                let c = a.cols();
                for r in 0..a.rows() {
                    softmax_row(a.row_slice(r), &mut out.data_mut()[r * c..(r + 1) * c]);
                }
                out
            }
            Op::Log(a) => {
                let a = self.val(*a);
                if a.data().iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain { node: i, op: "log", detail: "non-positive argument".into() });
                }
                a.map(f64::ln)
            }
            Op::Exp(a) => self.val(*a).map(f64::exp),
            Op::Abs(a) => self.val(*a).map(f64::abs),
            Op::ConcatCols(parts) => {
                let ts: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
                if ts.iter().any(|t| t.rows() != ts[0].rows()) {
                    return Err(shape_err("row counts differ".into()));
                }
                Tensor::concat_cols(&ts)?
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Mean(a) => {
                let a = self.val(*a);
                if a.is_empty() {
                    return Err(shape_err("mean of empty tensor".into()));
                }
                Tensor::scalar(a.mean())
            }
            Op::SoftmaxCrossEntropy(l, t) => {
                let (l, t) = (self.val(*l), self.val(*t));
                same_shape(l, t)?;
                if l.rows() == 0 {
                    return Err(shape_err("empty batch".into()));
                }
                let mut ls = vec![0.0; l.cols()];
                let mut total = 0.0;
                for r in 0..l.rows() {
                    log_softmax_row(l.row_slice(r), &mut ls);
                    total -= ls.iter().zip(t.row_slice(r)).map(|(a, b)| a * b).sum::<f64>();
                }
                Tensor::scalar(total / l.rows() as f64)
            }
            Op::StopGrad(a) => self.val(*a).clone(),
        })
    }

    /// Propagates `seed` (∂L/∂output) back through the graph.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let out_val = self.val(output);
        if out_val.shape() != seed.shape() {
            return Err(Error::NodeShape {
                node: output.0,
                op: self.ops[output.0].name(),
                detail: format!("seed {:?} for output {:?}", seed.shape(), out_val.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.ops.len()];
        grads[output.0] = Some(seed.clone());

        let needs = &self.needs_grad;
        let accum = |grads: &mut [Option<Tensor>], id: NodeId, g: Tensor| {
            if !needs[id.0] {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=output.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let y = self.values[i].as_ref().expect("evaluated");
            match &self.ops[i] {
                Op::Leaf { .. } | Op::Constant(_) | Op::StopGrad(_) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    accum(&mut grads, *a, dy.matmul_t(bv)?);
                    accum(&mut grads, *b, av.t_matmul(&dy)?);
                }
                Op::AddBias(x, b) => {
                    let c = dy.cols();
                    let mut db = Tensor::zeros(1, c);
                    for (k, v) in dy.data().iter().enumerate() {
                        db.data_mut()[k % c] += v;
                    }
                    accum(&mut grads, *b, db);
                    accum(&mut grads, *x, dy.clone());
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, dy.clone());
                    accum(&mut grads, *b, dy.clone());
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *b, dy.scale(-1.0));
                    accum(&mut grads, *a, dy.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    accum(&mut grads, *a, dy.zip_map(bv, |g, v| g * v));
                    accum(&mut grads, *b, dy.zip_map(av, |g, v| g * v));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    accum(&mut grads, *a, dy.zip_map(bv, |g, v| g / v));
                    let db = Tensor::from_fn(dy.rows(), dy.cols(), |r, c| {
                        let bb = bv.get(r, c);
                        -dy.get(r, c) * av.get(r, c) / (bb * bb)
                    });
                    accum(&mut grads, *b, db);
                }
                Op::Scale(a, k) => accum(&mut grads, *a, dy.scale(*k)),
                Op::Relu(a) => {
                    let av = self.val(*a);
                    accum(&mut grads, *a, dy.zip_map(av, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Tanh(a) => accum(&mut grads, *a, dy.zip_map(y, |g, t| g * (1.0 - t * t))),
                Op::Sigmoid(a) => accum(&mut grads, *a, dy.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::LogSigmoid(a) => {
                    let av = self.val(*a);
                    accum(&mut grads, *a, dy.zip_map(av, |g, x| g * sigmoid(-x)));
                }
                Op::SoftmaxRows(a) => {
                    let c = y.cols();
                    let mut dx = Tensor::zeros(y.rows(), c);
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = dy.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accum(&mut grads, *a, dx);
                }
                Op::Log(a) => {
                    let av = self.val(*a);
                    accum(&mut grads, *a, dy.zip_map(av, |g, x| g / x));
                }
                Op::Exp(a) => accum(&mut grads, *a, dy.zip_map(y, |g, e| g * e)),
                Op::Abs(a) => {
                    let av = self.val(*a);
                    accum(&mut grads, *a, dy.zip_map(av, |g, x| g * x.signum() * f64::from(x != 0.0)));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.val(*p).cols();
                        let part = Tensor::from_fn(dy.rows(), w, |r, c| dy.get(r, offset + c));
                        offset += w;
                        accum(&mut grads, *p, part);
                    }
                }
                Op::Sum(a) => {
                    let av = self.val(*a);
                    accum(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), dy.item()));
                }
                Op::Mean(a) => {
                    let av = self.val(*a);
                    let g = dy.item() / av.len() as f64;
                    accum(&mut grads, *a, Tensor::filled(av.rows(), av.cols(), g));
                }
                Op::SoftmaxCrossEntropy(l, t) => {
                    let (lv, tv) = (self.val(*l), self.val(*t));
                    let (n, c) = lv.shape();
                    let k = dy.item() / n as f64;
                    let mut dl = Tensor::zeros(n, c);
                    let mut dt = Tensor::zeros(n, c);
                    let mut row = vec![0.0; c];
                    for r in 0..n {
                        let tr = tv.row_slice(r);
                        let mass: f64 = tr.iter().sum();
                        log_softmax_row(lv.row_slice(r), &mut row);
                        for j in 0..c {
                            dl.data_mut()[r * c + j] = k * (row[j].exp() * mass - tr[j]);
                            dt.data_mut()[r * c + j] = -k * row[j];
                        }
                    }
                    accum(&mut grads, *l, dl);
                    accum(&mut grads, *t, dt);
                }
            }
            grads[i] = Some(dy);
        }

        Ok(Gradients { grads, shapes: self.values.iter().map(|v| v.as_ref().map(Tensor::shape)).collect(), leaves: self.leaves.clone() })
    }

    /// Value of `output` as a scalar, after [`Graph::forward`].
    pub fn scalar(&self, output: NodeId) -> Result<f64> {
        let v = self.value(output).ok_or(Error::NotEvaluated)?;
        if v.shape() != (1, 1) {
            return Err(Error::NonScalar { rows: v.rows(), cols: v.cols() });
        }
        Ok(v.item())
    }
}

/// Gradients from one [`Graph::backward`] call.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Option<(usize, usize)>>,
    leaves: HashMap<String, NodeId>,
}

impl Gradients {
    /// Gradient with respect to `node`; zeros when the node does not feed
    /// the differentiated output.
    pub fn wrt(&self, node: NodeId) -> Tensor {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[node.0].unwrap_or((0, 0));
                Tensor::zeros(r, c)
            }
        }
    }

    /// Whether any gradient reached `node`.
    pub fn reached(&self, node: NodeId) -> bool {
        self.grads[node.0].is_some()
    }

    pub fn leaf(&self, name: &str) -> Option<Tensor> {
        self.leaves.get(name).map(|&id| self.wrt(id))
    }

    /// Moves the gradient of a named leaf out of the set.
    pub fn take_leaf(&mut self, name: &str) -> Option<Tensor> {
        let id = *self.leaves.get(name)?;
        Some(self.grads[id.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[id.0].unwrap_or((0, 0));
            Tensor::zeros(r, c)
        }))
    }
}

/// Maximum over entries of `leaf` of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`, with numeric
/// gradients from central differences of the scalar `output`.
pub fn finite_diff_check(
    graph: &mut Graph,
    inputs: &[(&str, &Tensor)],
    output: NodeId,
    leaf: &str,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let leaf_id = graph.leaf(leaf).ok_or_else(|| Error::UnboundInput(leaf.to_string()))?;

    // Inputs become bound values so the probed leaf can be perturbed in place.
    let mut fixed: Vec<(&str, &Tensor)> = Vec::new();
    for &(name, t) in inputs {
        if name == leaf {
            graph.set_leaf(name, t.clone())?;
        } else {
            fixed.push((name, t));
        }
    }
    graph.forward(&fixed)?;
    let out = graph.value(output).ok_or(Error::NotEvaluated)?;
    if out.shape() != (1, 1) {
        return Err(Error::NonScalar { rows: out.rows(), cols: out.cols() });
    }
    let analytic = graph.backward(output, &Tensor::scalar(1.0))?.wrt(leaf_id);
    let base = graph.value(leaf_id).cloned().ok_or(Error::NotEvaluated)?;

    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus.data_mut()[k] += step;
        graph.set_leaf(leaf, plus)?;
        graph.forward(&fixed)?;
        let f_plus = graph.scalar(output)?;

        let mut minus = base.clone();
        minus.data_mut()[k] -= step;
        graph.set_leaf(leaf, minus)?;
        graph.forward(&fixed)?;
        let f_minus = graph.scalar(output)?;

        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic.data()[k];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    graph.set_leaf(leaf, base)?;
    graph.forward(&fixed)?;
    Ok(worst)
}

//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so [`Graph::backward`] simply walks the tape in reverse.
//! Leaves are either constants or parameters bound from a parameter set via
//! [`Graph::param`]; gradients are returned in a [`Gradients`] table and
//! accumulated into parameter sets by the caller.
//!
//! Broadcasting is limited to adding a `1 x m` bias row to an `n x m` input.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies one parameter tensor inside one parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub set: u64,
    pub index: usize,
}

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// A fresh process-unique id for a parameter set.
pub fn next_set_id() -> u64 {
    NEXT_SET_ID.fetch_add(1, Ordering::Relaxed)
}

/// A fused operation with a hand-written backward pass.
pub trait Function: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients wrt every input, given the upstream gradient of the output.
    /// Entries for inputs that do not require a gradient may be `None`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice(Var, usize),
    Scale(Var, f64),
    Mask(Var, Tensor),
    ScaleBy(Var, Var, usize),
    Sum(Var),
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Tensor },
    Gather { table: Var, ids: Vec<usize> },
    Custom { func: Box<dyn Function>, inputs: Vec<Var> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Concat(_) => "concat",
            Op::ConcatRows(_) => "concat_rows",
            Op::Slice(..) => "slice",
            Op::Scale(..) => "scale",
            Op::Mask(..) => "mask",
            Op::ScaleBy(..) => "scale_by",
            Op::Sum(_) => "sum",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Gather { .. } => "gather",
            Op::Custom { func, .. } => func.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
    bound: Vec<(ParamKey, Var)>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("params", &self.bound.len())
            .finish()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Graph {
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter leaves bound so far, in binding order.
    pub fn bound_params(&self) -> &[(ParamKey, Var)] {
        &self.bound
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not tied to a parameter set.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Bind a parameter; binding the same key twice returns the same leaf.
    pub fn param(&mut self, key: ParamKey, value: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, trainable);
        self.params.insert(key, v);
        self.bound.push((key, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", x.shape(), y.shape()),
            ));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// `x + b` where `b` is a `1 x m` row added to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut value = xv.clone();
        let bias = bv.data().to_vec();
        for r in 0..value.rows() {
            for (o, b) in value.row_slice_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(
                "mul",
                format!("{:?} * {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Concatenate along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Stack along rows; every part must have the same width.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `[start, start + width)`.
    pub fn slice(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + width > xv.cols() {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) of {:?}", start + width, xv.shape()),
            ));
        }
        let value = xv.slice_cols(start, width);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice(x, start), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(Error::dim(
                "mask",
                format!("{:?} vs mask {:?}", xv.shape(), mask.shape()),
            ));
        }
        let data = xv.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let value = Tensor::from_vec(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Mask(x, mask), rg))
    }

    /// `x * z[0, index]`, differentiable in both `x` and the gate vector `z`.
    pub fn scale_by(&mut self, x: Var, z: Var, index: usize) -> Result<Var> {
        let zv = self.value(z);
        if zv.rows() != 1 || index >= zv.cols() {
            return Err(Error::dim(
                "scale_by",
                format!("gate index {index} of {:?}", zv.shape()),
            ));
        }
        let s = zv.get(0, index);
        let value = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x, z]);
        Ok(self.push(value, Op::ScaleBy(x, z, index), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Row-wise softmax followed by the mean cross-entropy against `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(Error::dim(
                "softmax_xent",
                format!("{} rows vs {} targets", lv.rows(), targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::OutOfVocab {
                id: bad,
                size: lv.cols(),
            });
        }
        let probs = lv.softmax_rows();
        let n = targets.len().max(1) as f64;
        let nll: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -probs.get(r, t).max(f64::MIN_POSITIVE).ln())
            .sum();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(nll / n),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes row `i` of the output.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::OutOfVocab {
                id: bad,
                size: tv.rows(),
            });
        }
        let value = tv.select_rows(ids);
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Record a fused op whose forward value was computed by the caller.
    pub fn custom(&mut self, func: Box<dyn Function>, inputs: &[Var], value: Tensor) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                func,
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Error naming the first node holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().position(|n| !n.value.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "node {i} ({})",
                self.nodes[i].op.name()
            ))),
        }
    }

    /// Propagate d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, t: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if needs(*b) {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, b) => {
                if needs(*b) {
                    let mut col = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (c, v) in col.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *c += v;
                        }
                    }
                    acc(*b, col);
                }
                acc(*x, g.clone());
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, hadamard(g, val(*b)));
                }
                if needs(*b) {
                    acc(*b, hadamard(g, val(*a)));
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, zip_map(g, y, |g, y| g * y * (1.0 - y)));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, zip_map(g, y, |g, y| g * (1.0 - y * y)));
            }
            Op::Relu(x) => {
                let y = &node.value;
                acc(*x, zip_map(g, y, |g, y| if y > 0.0 { g } else { 0.0 }));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if needs(*p) {
                        acc(*p, g.slice_cols(start, w));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    if needs(*p) {
                        let data = g.data()[start * cols..(start + rows) * cols].to_vec();
                        acc(*p, Tensor::from_vec(rows, cols, data).expect("row split"));
                    }
                    start += rows;
                }
            }
            Op::Slice(x, start) => {
                let xv = val(*x);
                let mut full = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    full.row_slice_mut(r)[*start..*start + g.cols()]
                        .copy_from_slice(g.row_slice(r));
                }
                acc(*x, full);
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Mask(x, m) => acc(*x, hadamard(g, m)),
            Op::ScaleBy(x, z, index) => {
                let zv = val(*z);
                if needs(*x) {
                    let s = zv.get(0, *index);
                    acc(*x, g.map(|v| v * s));
                }
                if needs(*z) {
                    let d: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                    let mut gz = Tensor::zeros(1, zv.cols());
                    gz.set(0, *index, d);
                    acc(*z, gz);
                }
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let scale = g.item() / targets.len().max(1) as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = d.get(r, t);
                    d.set(r, t, v - 1.0);
                }
                d.scale_assign(scale);
                acc(*logits, d);
            }
            Op::Gather { table, ids } => {
                let tv = val(*table);
                let mut d = Tensor::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, v) in d.row_slice_mut(id).iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::Custom { func, inputs } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let outs = func.backward(&ins, &node.value, g);
                for (v, gi) in inputs.iter().zip(outs) {
                    if let Some(gi) = gi {
                        acc(*v, gi);
                    }
                }
            }
        }
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Compare analytic gradients of `build` against central finite differences.
///
/// `build` receives the graph and one trainable leaf per entry of `params`
/// and must return a `1 x 1` loss. It is re-run for every perturbation, so it
/// has to be deterministic. Returns the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over all
/// parameter entries, or infinity when any gradient is not finite.
pub fn grad_check<F>(params: &[Tensor], eps: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut eval = |ps: &[Tensor], want_grads: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.variable(p.clone())).collect();
        let loss = build(&mut g, &vars)?;
        let value = g.value(loss).item();
        let mut out = Vec::new();
        if want_grads {
            let grads = g.backward(loss)?;
            for (v, p) in vars.iter().zip(ps) {
                out.push(
                    grads
                        .get(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())),
                );
            }
        }
        Ok((value, out))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let (_, analytic) = eval(&work, true)?;
    let mut worst: f64 = 0.0;
    for p in 0..work.len() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let (plus, _) = eval(&work, false)?;
            work[p].data_mut()[i] = orig - eps;
            let (minus, _) = eval(&work, false)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[i];
            if !a.is_finite() || !numeric.is_finite() {
                return Ok(f64::INFINITY);
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

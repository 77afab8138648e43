//! Operation record and the differentiable primitive set.
//!
//! Every primitive checks its operand shapes, computes its output eagerly,
//! rejects non-finite results and appends one node to the [`Tape`]. Nodes are
//! appended in evaluation order, so the tape is always topologically sorted
//! and [`Tape::backward`] is a single reverse sweep.
//!
//! Binary elementwise ops broadcast in the trailing-dimension sense only: the
//! smaller operand must either hold a single value or have a shape equal to a
//! suffix of the larger operand's shape (a bias row added to a batch, say).

use std::cell::{Ref, RefCell};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a node on a tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    MeanAxis(NodeId, usize),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize, usize),
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Computation record. Confined to one thread; build a fresh tape per step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` for detached nodes.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Node ids that carry a gradient.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|_| i))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_ref(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[NodeId], name: &'static str) -> Result<Var<'_>> {
        value.check_finite(name)?;
        let rg = inputs.iter().any(|&i| self.requires_grad(i));
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push(value, rg, op))
    }

    /// Reverse sweep from a scalar `loss`. The seed gradient is 1.
    ///
    /// Every leaf created with [`Tape::param`] receives a gradient, zero if
    /// it does not influence the loss. Constants get none.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if loss.id >= n {
            return Err(Error::invalid("loss does not belong to this tape"));
        }
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let contribs = backward_rule(&nodes, id, &node.op, &g)?;
            grads[id] = Some(g);
            for (input, gi) in contribs {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match g {
                Some(g) => Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                None if node.requires_grad && matches!(node.op, Op::Leaf) => {
                    Some(Tensor::zeros(node.value.shape().to_vec()))
                }
                None => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Resolves how `small` broadcasts against `big`; returns the output shape.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    let suffix = |big: &[usize], small: &[usize]| {
        small.len() <= big.len() && big[big.len() - small.len()..] == *small
    };
    if nb == 1 || (nb <= na && suffix(a, b)) {
        Ok(a.to_vec())
    } else if na == 1 || (na <= nb && suffix(b, a)) {
        Ok(b.to_vec())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        })
    }
}

/// Sums a full-size gradient down to an operand that was broadcast.
fn reduce_to(g: Vec<f64>, target: usize) -> Vec<f64> {
    if g.len() == target {
        return g;
    }
    let mut out = vec![0.0; target];
    for (k, v) in g.into_iter().enumerate() {
        out[k % target] += v;
    }
    out
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn backward_rule(nodes: &[Node], id: NodeId, op: &Op, g: &[f64]) -> Result<Vec<(NodeId, Vec<f64>)>> {
    let val = |i: NodeId| &nodes[i].value;
    let out = &nodes[id].value;
    let unary = |a: NodeId, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<(NodeId, Vec<f64>)> {
        let x = val(a).data();
        let y = out.data();
        vec![(a, (0..g.len()).map(|k| f(g[k], x[k], y[k])).collect())]
    };
    let binary = |a: NodeId,
                  b: NodeId,
                  fa: &dyn Fn(f64, f64, f64) -> f64,
                  fb: &dyn Fn(f64, f64, f64) -> f64|
     -> Vec<(NodeId, Vec<f64>)> {
        let (xa, xb) = (val(a).data(), val(b).data());
        let (na, nb) = (xa.len(), xb.len());
        let n = g.len();
        let ga: Vec<f64> = (0..n).map(|k| fa(g[k], xa[k % na], xb[k % nb])).collect();
        let gb: Vec<f64> = (0..n).map(|k| fb(g[k], xa[k % na], xb[k % nb])).collect();
        vec![(a, reduce_to(ga, na)), (b, reduce_to(gb, nb))]
    };
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => binary(*a, *b, &|g, _, _| g, &|g, _, _| g),
        Op::Sub(a, b) => binary(*a, *b, &|g, _, _| g, &|g, _, _| -g),
        Op::Mul(a, b) => binary(*a, *b, &|g, _, y| g * y, &|g, x, _| g * x),
        Op::Div(a, b) => binary(*a, *b, &|g, _, y| g / y, &|g, x, y| -g * x / (y * y)),
        Op::MatMul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let bt = transpose_raw(val(*b).data(), k, n);
            let at = transpose_raw(val(*a).data(), m, k);
            vec![
                (*a, matmul_raw(g, &bt, m, n, k)),
                (*b, matmul_raw(&at, g, k, m, n)),
            ]
        }
        Op::Neg(a) => unary(*a, &|g, _, _| -g),
        Op::Exp(a) => unary(*a, &|g, _, y| g * y),
        Op::Log(a) => unary(*a, &|g, x, _| g / x),
        Op::Tanh(a) => unary(*a, &|g, _, y| g * (1.0 - y * y)),
        Op::Sigmoid(a) => unary(*a, &|g, _, y| g * y * (1.0 - y)),
        Op::Softplus(a) => unary(*a, &|g, x, _| g * sigmoid(x)),
        Op::Square(a) => unary(*a, &|g, x, _| 2.0 * g * x),
        Op::Scale(a, c) => unary(*a, &|g, _, _| g * c),
        Op::Offset(a) => unary(*a, &|g, _, _| g),
        Op::Clamp(a, lo, hi) => unary(*a, &|g, x, _| if x >= *lo && x <= *hi { g } else { 0.0 }),
        Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
        Op::Mean(a) => {
            let n = val(*a).numel();
            vec![(*a, vec![g[0] / n as f64; n])]
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let (outer, mid, inner) = axis_split(val(*a).shape(), *axis);
            let scale = if matches!(op, Op::MeanAxis(..)) {
                1.0 / mid as f64
            } else {
                1.0
            };
            let mut ga = vec![0.0; outer * mid * inner];
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner {
                        ga[(o * mid + m) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            vec![(*a, ga)]
        }
        Op::Concat(ids, axis) => {
            let shape = out.shape();
            let (outer, total, inner) = axis_split(shape, *axis);
            let mut offset = 0;
            let mut res = Vec::with_capacity(ids.len());
            for &part in ids {
                let width = val(part).shape()[*axis];
                let mut gp = Vec::with_capacity(outer * width * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gp.extend_from_slice(&g[start..start + width * inner]);
                }
                offset += width;
                res.push((part, gp));
            }
            res
        }
        Op::Slice(a, axis, start, end) => {
            let (outer, mid, inner) = axis_split(val(*a).shape(), *axis);
            let width = end - start;
            let mut ga = vec![0.0; outer * mid * inner];
            for o in 0..outer {
                let dst = (o * mid + start) * inner;
                let src = o * width * inner;
                ga[dst..dst + width * inner].copy_from_slice(&g[src..src + width * inner]);
            }
            vec![(*a, ga)]
        }
        Op::Reshape(a) => vec![(*a, g.to_vec())],
    })
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_ref(self.id).numel()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Result<f64> {
        self.tape.value_ref(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid("operands live on different tapes"))
        }
    }

    fn elementwise(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            let shape = broadcast_shape(name, a.shape(), b.shape())?;
            let n: usize = shape.iter().product();
            let (xa, xb) = (a.data(), b.data());
            let (na, nb) = (xa.len(), xb.len());
            let data = (0..n).map(|k| f(xa[k % na], xb[k % nb])).collect();
            Tensor::from_parts(shape, data)
        };
        self.tape.record(value, op, &[self.id, other.id], name)
    }

    fn map(&self, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self.id).map(f);
        self.tape.record(value, op, &[self.id], name)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: sa.to_vec(),
                    right: sb.to_vec(),
                });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        };
        self.tape
            .record(value, Op::MatMul(self.id, other.id), &[self.id, other.id], "matmul")
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.map("neg", |x| -x, Op::Neg(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.map("exp", f64::exp, Op::Exp(self.id))
    }

    /// Natural log; non-positive inputs are a domain error.
    pub fn ln(&self) -> Result<Var<'t>> {
        {
            let v = self.tape.value_ref(self.id);
            if let Some(bad) = v.data().iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        self.map("log", f64::ln, Op::Log(self.id))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.map("tanh", f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.map("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var<'t>> {
        self.map("softplus", softplus, Op::Softplus(self.id))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.map("square", |x| x * x, Op::Square(self.id))
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.map("scale", |x| x * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.map("add_scalar", |x| x + c, Op::Offset(self.id))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.map("clamp", |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.tape.value_ref(self.id).sum();
        self.tape
            .record(Tensor::scalar(s), Op::Sum(self.id), &[self.id], "sum")
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let s = {
            let v = self.tape.value_ref(self.id);
            v.sum() / v.numel() as f64
        };
        self.tape
            .record(Tensor::scalar(s), Op::Mean(self.id), &[self.id], "mean")
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(Error::invalid(format!(
                    "axis {axis} out of range for shape {shape:?}"
                )));
            }
            let (outer, mid, inner) = axis_split(shape, axis);
            let scale = if mean { 1.0 / mid as f64 } else { 1.0 };
            let x = v.data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for m in 0..mid {
                    for i in 0..inner {
                        data[o * inner + i] += x[(o * mid + m) * inner + i];
                    }
                }
            }
            data.iter_mut().for_each(|d| *d *= scale);
            let mut out_shape: Vec<usize> = shape.to_vec();
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
            Tensor::from_parts(out_shape, data)
        };
        let op = if mean {
            Op::MeanAxis(self.id, axis)
        } else {
            Op::SumAxis(self.id, axis)
        };
        self.tape.record(value, op, &[self.id], "reduce_axis")
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value_ref(self.id);
            let shape = v.shape();
            if axis >= shape.len() || start >= end || end > shape[axis] {
                return Err(Error::invalid(format!(
                    "slice {start}..{end} on axis {axis} of shape {shape:?}"
                )));
            }
            let (outer, mid, inner) = axis_split(shape, axis);
            let width = end - start;
            let mut data = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                let s = (o * mid + start) * inner;
                data.extend_from_slice(&v.data()[s..s + width * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = width;
            Tensor::from_parts(out_shape, data)
        };
        self.tape
            .record(value, Op::Slice(self.id, axis, start, end), &[self.id], "slice")
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self.id).reshape(shape)?;
        self.tape
            .record(value, Op::Reshape(self.id), &[self.id], "reshape")
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let tape = first.tape;
    for p in parts {
        first.same_tape(p)?;
    }
    let value = {
        let vals: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
        let base = vals[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for v in &vals {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Tensor::from_parts(shape, data)
    };
    let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
    tape.record(value, Op::Concat(ids.clone(), axis), &ids, "concat")
}

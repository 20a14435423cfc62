//! Reverse-mode tape.
//!
//! Every vector-Jacobian product is written once against the [`Cotangent`]
//! backend trait. The numeric backend evaluates it on plain arrays; the graph
//! backend records it as new tape nodes, which is how [`Tape::input_gradient`]
//! produces a differentiable input gradient. Nodes created that way carry
//! order 1, and asking for the input gradient of an order-1 output is refused.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::array::{self, Array};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub String);

impl ParamId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    /// Heaviside step, `1` where the input is strictly positive. Zero derivative.
    Step(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    SumTo(NodeId, Vec<usize>),
    Mean(NodeId),
    BroadcastTo(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize, usize),
    Pad(NodeId, usize, usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf | Param => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Transpose(a) | Relu(a) | Step(a) | Tanh(a) | Sigmoid(a)
            | Exp(a) | Log(a) | Square(a) | Sqrt(a) | SumTo(a, _) | Mean(a)
            | BroadcastTo(a, _) | Slice(a, ..) | Pad(a, ..) => vec![*a],
            Concat(parts, _) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Param => "param",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(_) => "neg",
            Scale(..) => "scale",
            MatMul(..) => "matmul",
            Transpose(_) => "transpose",
            Relu(_) => "relu",
            Step(_) => "step",
            Tanh(_) => "tanh",
            Sigmoid(_) => "sigmoid",
            Exp(_) => "exp",
            Log(_) => "log",
            Square(_) => "square",
            Sqrt(_) => "sqrt",
            SumTo(..) => "sum",
            Mean(_) => "mean",
            BroadcastTo(..) => "broadcast",
            Concat(..) => "concat",
            Slice(..) => "slice",
            Pad(..) => "pad",
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluates a non-leaf op on already-computed input values.
fn apply(op: &Op, vals: &[Array]) -> Result<Array> {
    use Op::*;
    let v = |id: &NodeId| &vals[id.0];
    let out = match op {
        Leaf | Param => unreachable!("leaves carry recorded values"),
        Add(a, b) => array::zip("add", v(a), v(b), |x, y| x + y)?,
        Sub(a, b) => array::zip("sub", v(a), v(b), |x, y| x - y)?,
        Mul(a, b) => array::zip("mul", v(a), v(b), |x, y| x * y)?,
        Div(a, b) => array::zip("div", v(a), v(b), |x, y| x / y)?,
        Neg(a) => v(a).map(|x| -x),
        Scale(a, c) => v(a).map(|x| x * c),
        MatMul(a, b) => array::matmul(v(a), v(b))?,
        Transpose(a) => array::transpose(v(a))?,
        Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Step(a) => v(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        Tanh(a) => v(a).map(f64::tanh),
        Sigmoid(a) => v(a).map(sigmoid),
        Exp(a) => v(a).map(f64::exp),
        Log(a) => v(a).map(f64::ln),
        Square(a) => v(a).map(|x| x * x),
        Sqrt(a) => v(a).map(f64::sqrt),
        SumTo(a, shape) => array::sum_to(v(a), shape)?,
        Mean(a) => {
            let x = v(a);
            Array::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        }
        BroadcastTo(a, shape) => array::broadcast_to(v(a), shape)?,
        Concat(parts, axis) => {
            let refs: Vec<&Array> = parts.iter().map(v).collect();
            array::concat(&refs, *axis)?
        }
        Slice(a, axis, s, e) => array::slice(v(a), *axis, *s, *e)?,
        Pad(a, axis, b, e) => array::pad(v(a), *axis, *b, *e)?,
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("output of {}", op.name())));
    }
    Ok(out)
}

/// Parameter gradients keyed by parameter id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap(BTreeMap<ParamId, Array>);

impl GradientMap {
    pub fn get(&self, id: &ParamId) -> Option<&Array> {
        self.0.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.0.get(&ParamId::new(name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Array)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Append-only record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Array>,
    orders: Vec<u8>,
    params: HashMap<ParamId, NodeId>,
    recording_order: u8,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.values[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.values[id.0].shape()
    }

    /// Node lookup by parameter id.
    pub fn param_node(&self, id: &ParamId) -> Option<NodeId> {
        self.params.get(id).copied()
    }

    fn push(&mut self, op: Op, value: Array) -> NodeId {
        let order = op
            .inputs()
            .iter()
            .map(|i| self.orders[i.0])
            .max()
            .unwrap_or(0)
            .max(self.recording_order);
        self.ops.push(op);
        self.values.push(value);
        self.orders.push(order);
        NodeId(self.ops.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        if let Some(bad) = op.inputs().iter().find(|i| i.0 >= self.ops.len()) {
            return Err(Error::Invalid(format!("{}: unknown node {}", op.name(), bad.0)));
        }
        let value = apply(&op, &self.values)?;
        Ok(self.push(op, value))
    }

    /// Records a constant or data input leaf.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Array::scalar(v))
    }

    /// Records a trainable parameter leaf. Each id may be bound once per tape.
    pub fn param(&mut self, id: ParamId, value: Array) -> Result<NodeId> {
        if self.params.contains_key(&id) {
            return Err(Error::DuplicateParam(id.0));
        }
        let node = self.push(Op::Param, value);
        self.params.insert(id, node);
        Ok(node)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(a))
    }

    pub fn step(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Step(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Square(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sqrt(a))
    }

    /// Sum of all entries, shape `[]`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SumTo(a, vec![]))
    }

    /// Sums down to a broadcast-compatible shape, e.g. `[n, m] -> [n, 1]`.
    pub fn sum_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::SumTo(a, shape.to_vec()))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean(a))
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::BroadcastTo(a, shape.to_vec()))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.record(Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.record(Op::Slice(a, axis, start, end))
    }

    pub fn pad(&mut self, a: NodeId, axis: usize, before: usize, after: usize) -> Result<NodeId> {
        self.record(Op::Pad(a, axis, before, after))
    }

    /// `a + broadcast(b)` where `b` broadcasts to `a`'s shape (bias add).
    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if self.shape(b) == shape.as_slice() {
            return self.add(a, b);
        }
        let bb = self.broadcast_to(b, &shape)?;
        self.add(a, bb)
    }

    /// Nodes that depend on any of `targets`, restricted to indices `..=out`.
    fn dependents(&self, out: NodeId, targets: &[NodeId]) -> Vec<bool> {
        let mut needs = vec![false; out.0 + 1];
        for t in targets {
            if t.0 <= out.0 {
                needs[t.0] = true;
            }
        }
        for i in 0..=out.0 {
            if !needs[i] {
                needs[i] = self.ops[i].inputs().iter().any(|j| needs[j.0]);
            }
        }
        needs
    }

    /// Exact reverse-mode gradient of scalar `out` with respect to `wrt`.
    pub fn backward(&self, out: NodeId, wrt: &[ParamId]) -> Result<GradientMap> {
        let shape = self.shape(out);
        if !shape.is_empty() {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let targets = wrt
            .iter()
            .map(|p| self.param_node(p).ok_or_else(|| Error::UnknownParam(p.0.clone())))
            .collect::<Result<Vec<_>>>()?;
        let needs = self.dependents(out, &targets);
        let mut ctx = Numeric { tape: self };
        let adj = reverse(&mut ctx, out, Array::scalar(1.0), &needs)?;
        let mut map = BTreeMap::new();
        for (p, node) in wrt.iter().zip(&targets) {
            let g = adj
                .get(node.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Array::zeros(self.shape(*node)));
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {p}")));
            }
            map.insert(p.clone(), g);
        }
        Ok(GradientMap(map))
    }

    /// Gradient of scalar `out` with respect to leaf `input`, recorded on the
    /// tape as differentiable nodes.
    pub fn input_gradient(&mut self, out: NodeId, input: NodeId) -> Result<NodeId> {
        let shape = self.shape(out);
        if !shape.is_empty() {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        if self.orders[out.0] >= 1 {
            return Err(Error::NestingLimit);
        }
        if !matches!(self.ops.get(input.0), Some(Op::Leaf)) {
            return Err(Error::NotLeaf(input.0));
        }
        let needs = self.dependents(out, &[input]);
        self.recording_order = 1;
        let result = (|| {
            let seed = self.scalar(1.0);
            let mut ctx = Graph { tape: &mut *self };
            let adj = reverse(&mut ctx, out, seed, &needs)?;
            match adj.get(input.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Array::zeros(self.shape(input));
                    Ok(self.constant(zeros))
                }
            }
        })();
        self.recording_order = 0;
        result
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Array>> {
        let mut vals: Vec<Array> = Vec::with_capacity(self.len());
        for (op, recorded) in self.ops.iter().zip(&self.values) {
            let v = match op {
                Op::Leaf | Op::Param => recorded.clone(),
                _ => apply(op, &vals)?,
            };
            vals.push(v);
        }
        Ok(vals)
    }

    /// Recorded forward values, in node order.
    pub fn values(&self) -> &[Array] {
        &self.values
    }
}

/// Arithmetic needed to express every vector-Jacobian product.
trait Cotangent {
    type V: Clone;
    fn op(&self, id: NodeId) -> Op;
    fn primal(&mut self, id: NodeId) -> Self::V;
    fn input_shape(&self, id: NodeId) -> Vec<usize>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn neg(&mut self, a: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, c: f64) -> Result<Self::V>;
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn transpose(&mut self, a: &Self::V) -> Result<Self::V>;
    fn step(&mut self, a: &Self::V) -> Result<Self::V>;
    fn sum_to(&mut self, a: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn broadcast_to(&mut self, a: &Self::V, shape: &[usize]) -> Result<Self::V>;
    fn slice(&mut self, a: &Self::V, axis: usize, s: usize, e: usize) -> Result<Self::V>;
    fn pad(&mut self, a: &Self::V, axis: usize, b: usize, e: usize) -> Result<Self::V>;
}

struct Numeric<'a> {
    tape: &'a Tape,
}

impl Cotangent for Numeric<'_> {
    type V = Array;
    fn op(&self, id: NodeId) -> Op {
        self.tape.ops[id.0].clone()
    }
    fn primal(&mut self, id: NodeId) -> Array {
        self.tape.values[id.0].clone()
    }
    fn input_shape(&self, id: NodeId) -> Vec<usize> {
        self.tape.shape(id).to_vec()
    }
    fn add(&mut self, a: &Array, b: &Array) -> Result<Array> {
        array::zip("add", a, b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Array, b: &Array) -> Result<Array> {
        array::zip("sub", a, b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Array, b: &Array) -> Result<Array> {
        array::zip("mul", a, b, |x, y| x * y)
    }
    fn div(&mut self, a: &Array, b: &Array) -> Result<Array> {
        array::zip("div", a, b, |x, y| x / y)
    }
    fn neg(&mut self, a: &Array) -> Result<Array> {
        Ok(a.map(|x| -x))
    }
    fn scale(&mut self, a: &Array, c: f64) -> Result<Array> {
        Ok(a.map(|x| x * c))
    }
    fn matmul(&mut self, a: &Array, b: &Array) -> Result<Array> {
        array::matmul(a, b)
    }
    fn transpose(&mut self, a: &Array) -> Result<Array> {
        array::transpose(a)
    }
    fn step(&mut self, a: &Array) -> Result<Array> {
        Ok(a.map(|x| if x > 0.0 { 1.0 } else { 0.0 }))
    }
    fn sum_to(&mut self, a: &Array, shape: &[usize]) -> Result<Array> {
        array::sum_to(a, shape)
    }
    fn broadcast_to(&mut self, a: &Array, shape: &[usize]) -> Result<Array> {
        array::broadcast_to(a, shape)
    }
    fn slice(&mut self, a: &Array, axis: usize, s: usize, e: usize) -> Result<Array> {
        array::slice(a, axis, s, e)
    }
    fn pad(&mut self, a: &Array, axis: usize, b: usize, e: usize) -> Result<Array> {
        array::pad(a, axis, b, e)
    }
}

struct Graph<'a> {
    tape: &'a mut Tape,
}

impl Cotangent for Graph<'_> {
    type V = NodeId;
    fn op(&self, id: NodeId) -> Op {
        self.tape.ops[id.0].clone()
    }
    fn primal(&mut self, id: NodeId) -> NodeId {
        id
    }
    fn input_shape(&self, id: NodeId) -> Vec<usize> {
        self.tape.shape(id).to_vec()
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.add(*a, *b)
    }
    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.sub(*a, *b)
    }
    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.mul(*a, *b)
    }
    fn div(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.div(*a, *b)
    }
    fn neg(&mut self, a: &NodeId) -> Result<NodeId> {
        self.tape.neg(*a)
    }
    fn scale(&mut self, a: &NodeId, c: f64) -> Result<NodeId> {
        self.tape.scale(*a, c)
    }
    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.matmul(*a, *b)
    }
    fn transpose(&mut self, a: &NodeId) -> Result<NodeId> {
        self.tape.transpose(*a)
    }
    fn step(&mut self, a: &NodeId) -> Result<NodeId> {
        self.tape.step(*a)
    }
    fn sum_to(&mut self, a: &NodeId, shape: &[usize]) -> Result<NodeId> {
        self.tape.sum_to(*a, shape)
    }
    fn broadcast_to(&mut self, a: &NodeId, shape: &[usize]) -> Result<NodeId> {
        self.tape.broadcast_to(*a, shape)
    }
    fn slice(&mut self, a: &NodeId, axis: usize, s: usize, e: usize) -> Result<NodeId> {
        self.tape.slice(*a, axis, s, e)
    }
    fn pad(&mut self, a: &NodeId, axis: usize, b: usize, e: usize) -> Result<NodeId> {
        self.tape.pad(*a, axis, b, e)
    }
}

/// Propagates adjoints from `out` back through nodes flagged in `needs`.
fn reverse<C: Cotangent>(
    ctx: &mut C,
    out: NodeId,
    seed: C::V,
    needs: &[bool],
) -> Result<Vec<Option<C::V>>> {
    let mut adj: Vec<Option<C::V>> = vec![None; out.0 + 1];
    adj[out.0] = Some(seed);
    for i in (0..=out.0).rev() {
        let Some(g) = adj[i].take() else { continue };
        let op = ctx.op(NodeId(i));
        let contributions = vjp(ctx, &op, NodeId(i), &g, needs)?;
        adj[i] = Some(g);
        for (input, c) in contributions {
            adj[input.0] = Some(match adj[input.0].take() {
                Some(prev) => ctx.add(&prev, &c)?,
                None => c,
            });
        }
    }
    Ok(adj)
}

fn vjp<C: Cotangent>(
    ctx: &mut C,
    op: &Op,
    node: NodeId,
    g: &C::V,
    needs: &[bool],
) -> Result<Vec<(NodeId, C::V)>> {
    use Op::*;
    let want = |id: &NodeId| needs[id.0];
    let mut out = Vec::with_capacity(2);
    match op {
        Leaf | Param | Step(_) => {}
        Add(a, b) => {
            if want(a) {
                out.push((*a, g.clone()));
            }
            if want(b) {
                out.push((*b, g.clone()));
            }
        }
        Sub(a, b) => {
            if want(a) {
                out.push((*a, g.clone()));
            }
            if want(b) {
                out.push((*b, ctx.neg(g)?));
            }
        }
        Mul(a, b) => {
            if want(a) {
                let bv = ctx.primal(*b);
                out.push((*a, ctx.mul(g, &bv)?));
            }
            if want(b) {
                let av = ctx.primal(*a);
                out.push((*b, ctx.mul(g, &av)?));
            }
        }
        Div(a, b) => {
            let bv = ctx.primal(*b);
            if want(a) {
                out.push((*a, ctx.div(g, &bv)?));
            }
            if want(b) {
                // -g * (a / b) / b
                let y = ctx.primal(node);
                let gy = ctx.mul(g, &y)?;
                let q = ctx.div(&gy, &bv)?;
                out.push((*b, ctx.neg(&q)?));
            }
        }
        Neg(a) => {
            if want(a) {
                out.push((*a, ctx.neg(g)?));
            }
        }
        Scale(a, c) => {
            if want(a) {
                out.push((*a, ctx.scale(g, *c)?));
            }
        }
        MatMul(a, b) => {
            if want(a) {
                let bv = ctx.primal(*b);
                let bt = ctx.transpose(&bv)?;
                out.push((*a, ctx.matmul(g, &bt)?));
            }
            if want(b) {
                let av = ctx.primal(*a);
                let at = ctx.transpose(&av)?;
                out.push((*b, ctx.matmul(&at, g)?));
            }
        }
        Transpose(a) => {
            if want(a) {
                out.push((*a, ctx.transpose(g)?));
            }
        }
        Relu(a) => {
            if want(a) {
                let av = ctx.primal(*a);
                let mask = ctx.step(&av)?;
                out.push((*a, ctx.mul(g, &mask)?));
            }
        }
        Tanh(a) => {
            if want(a) {
                // g - g*y*y
                let y = ctx.primal(node);
                let gy = ctx.mul(g, &y)?;
                let gyy = ctx.mul(&gy, &y)?;
                out.push((*a, ctx.sub(g, &gyy)?));
            }
        }
        Sigmoid(a) => {
            if want(a) {
                // g*y - g*y*y
                let y = ctx.primal(node);
                let gy = ctx.mul(g, &y)?;
                let gyy = ctx.mul(&gy, &y)?;
                out.push((*a, ctx.sub(&gy, &gyy)?));
            }
        }
        Exp(a) => {
            if want(a) {
                let y = ctx.primal(node);
                out.push((*a, ctx.mul(g, &y)?));
            }
        }
        Log(a) => {
            if want(a) {
                let av = ctx.primal(*a);
                out.push((*a, ctx.div(g, &av)?));
            }
        }
        Square(a) => {
            if want(a) {
                let av = ctx.primal(*a);
                let ga = ctx.mul(g, &av)?;
                out.push((*a, ctx.scale(&ga, 2.0)?));
            }
        }
        Sqrt(a) => {
            if want(a) {
                let y = ctx.primal(node);
                let q = ctx.div(g, &y)?;
                out.push((*a, ctx.scale(&q, 0.5)?));
            }
        }
        SumTo(a, _) => {
            if want(a) {
                let shape = ctx.input_shape(*a);
                out.push((*a, ctx.broadcast_to(g, &shape)?));
            }
        }
        Mean(a) => {
            if want(a) {
                let shape = ctx.input_shape(*a);
                let n: usize = shape.iter().product();
                let gs = ctx.scale(g, 1.0 / n as f64)?;
                out.push((*a, ctx.broadcast_to(&gs, &shape)?));
            }
        }
        BroadcastTo(a, _) => {
            if want(a) {
                let shape = ctx.input_shape(*a);
                out.push((*a, ctx.sum_to(g, &shape)?));
            }
        }
        Concat(parts, axis) => {
            let mut offset = 0;
            for p in parts {
                let len = ctx.input_shape(*p)[*axis];
                if want(p) {
                    out.push((*p, ctx.slice(g, *axis, offset, offset + len)?));
                }
                offset += len;
            }
        }
        Slice(a, axis, s, e) => {
            if want(a) {
                let full = ctx.input_shape(*a)[*axis];
                out.push((*a, ctx.pad(g, *axis, *s, full - *e)?));
            }
        }
        Pad(a, axis, b, _) => {
            if want(a) {
                let len = ctx.input_shape(*a)[*axis];
                out.push((*a, ctx.slice(g, *axis, *b, *b + len)?));
            }
        }
    }
    Ok(out)
}

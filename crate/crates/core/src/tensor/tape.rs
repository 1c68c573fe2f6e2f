//! Static computation graph with reverse-mode differentiation.
//!
//! A [`Tape`] records primitive operations in topological order against
//! named leaves. Leaves are bound to concrete arrays at evaluation time, so a
//! tape can be built once and replayed on any inputs of the declared shapes.

use std::collections::HashMap;

use super::array::{gemm, Array};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Differentiable,
    Constant,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: String, kind: LeafKind },
    Const(Array),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    BiasAdd(NodeId, NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, a: f64, y: NodeId, b: f64 },
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Sum(NodeId),
    SqNorm(NodeId),
    RowSqNorm(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf { .. } | Op::Const(_) => vec![],
            Op::MatMul(a, b) | Op::BiasAdd(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Affine { x, y, .. } => vec![x, y],
            Op::Transpose(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Sum(a)
            | Op::SqNorm(a)
            | Op::RowSqNorm(a) => vec![a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Leaf bindings for one evaluation.
#[derive(Debug, Default, Clone)]
pub struct Inputs<'a> {
    map: HashMap<String, &'a Array>,
}

impl<'a> Inputs<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: &'a Array) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: &'a Array) {
        self.map.insert(name.into(), value);
    }

    pub(crate) fn lookup(&self, name: &str) -> Option<&'a Array> {
        self.get(name)
    }

    fn get(&self, name: &str) -> Option<&'a Array> {
        self.map.get(name).copied()
    }
}

/// Forward values of every node of a tape.
#[derive(Debug, Clone)]
pub struct Values(Vec<Array>);

impl Values {
    pub fn get(&self, id: NodeId) -> &Array {
        &self.0[id.0]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
    output: Option<NodeId>,
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    /// Marks `id` as the tape output. Defaults to the last node.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape });
        id
    }

    fn shape_err(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    pub fn leaf(&mut self, name: &str, shape: &[usize], kind: LeafKind) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate leaf `{name}`")));
        }
        if shape.len() > 2 {
            return Err(self.shape_err("leaf", format!("rank {} unsupported", shape.len())));
        }
        let id = self.push(
            Op::Leaf {
                name: name.to_string(),
                kind,
            },
            shape.to_vec(),
        );
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.leaf(name, shape, LeafKind::Differentiable)
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Const(value), shape)
    }

    /// `a [m,k] x b [k,n]` or `a [m,k] x b [k]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => vec![*m, *n],
            ([m, k], [k2]) if k == k2 => vec![*m],
            _ => {
                return Err(self.shape_err("matmul", format!("cannot multiply {sa:?} by {sb:?}")))
            }
        };
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        match *self.shape(a) {
            [r, c] => Ok(self.push(Op::Transpose(a), vec![c, r])),
            ref s => Err(self.shape_err("transpose", format!("needs a matrix, got {s:?}"))),
        }
    }

    /// Adds a vector to every row. The only broadcasting primitive.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let width = match sx.as_slice() {
            [_, h] | [h] => *h,
            _ => 0,
        };
        if sb.as_slice() != [width] || width == 0 {
            return Err(self.shape_err("bias_add", format!("bias {sb:?} does not fit {sx:?}")));
        }
        Ok(self.push(Op::BiasAdd(x, bias), sx))
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(op, s)
    }

    /// Leaky ReLU. The derivative at exactly zero is taken as 1.
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(Op::LeakyRelu(a, slope), a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a)
    }

    /// `log(1 + exp(a))`, evaluated without overflow.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Softplus(a), a)
    }

    /// Natural log; non-positive inputs propagate `-inf`/`NaN`.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log(a), a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp(a), a)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sqrt(a), a)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(Op::Scale(a, s), a)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(Op::AddScalar(a, s), a)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(
                op,
                format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    /// `a * x + b * y`, elementwise.
    pub fn affine(&mut self, a: f64, x: NodeId, b: f64, y: NodeId) -> Result<NodeId> {
        let s = self.same_shape("affine", x, y)?;
        Ok(self.push(Op::Affine { x, a, y, b }, s))
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.affine(1.0, x, 1.0, y)
    }

    pub fn sub(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        self.affine(1.0, x, -1.0, y)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.shape(a).iter().product::<usize>().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SqNorm(a), vec![])
    }

    /// Squared Euclidean norm of each row: `[b, h] -> [b]`.
    pub fn row_sq_norm(&mut self, a: NodeId) -> Result<NodeId> {
        match *self.shape(a) {
            [b, _] => Ok(self.push(Op::RowSqNorm(a), vec![b])),
            ref s => Err(self.shape_err("row_sq_norm", format!("needs a matrix, got {s:?}"))),
        }
    }

    pub(crate) fn output_id(&self) -> Result<NodeId> {
        self.output
            .or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
            .ok_or_else(|| Error::InvalidArgument("empty tape".into()))
    }

    /// Evaluates every node.
    pub fn forward(&self, inputs: &Inputs<'_>) -> Result<Values> {
        let mut vals: Vec<Array> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = self.eval_node(i, node, &vals, inputs)?;
            vals.push(v);
        }
        Ok(Values(vals))
    }

    /// Evaluates the tape output.
    pub fn evaluate(&self, inputs: &Inputs<'_>) -> Result<Array> {
        let out = self.output_id()?;
        let mut vals = self.forward(inputs)?.0;
        Ok(vals.swap_remove(out.0))
    }

    fn eval_node(&self, i: usize, node: &Node, vals: &[Array], inputs: &Inputs<'_>) -> Result<Array> {
        let v = |id: NodeId| &vals[id.0];
        let shape = node.shape.clone();
        let out = match &node.op {
            Op::Leaf { name, .. } => {
                let a = inputs.get(name).ok_or_else(|| Error::UnboundLeaf(name.clone()))?;
                if a.shape() != node.shape.as_slice() {
                    return Err(Error::Shape {
                        node: i,
                        op: "leaf",
                        detail: format!(
                            "`{name}` declared {:?}, bound {:?}",
                            node.shape,
                            a.shape()
                        ),
                    });
                }
                a.clone()
            }
            Op::Const(a) => a.clone(),
            Op::MatMul(a, b) => {
                let (av, bv) = (v(*a), v(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.shape().len() == 2 { bv.shape()[1] } else { 1 };
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut c);
                Array::from_parts(shape, c)
            }
            Op::Transpose(a) => {
                let av = v(*a);
                let (r, c) = (av.shape()[0], av.shape()[1]);
                let mut t = vec![0.0; r * c];
                for row in 0..r {
                    for col in 0..c {
                        t[col * r + row] = av.data()[row * c + col];
                    }
                }
                Array::from_parts(shape, t)
            }
            Op::BiasAdd(x, b) => {
                let mut out = v(*x).clone();
                let bias = v(*b).data();
                for row in out.data_mut().chunks_mut(bias.len()) {
                    row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
                }
                out
            }
            Op::LeakyRelu(a, s) => v(*a).map(|x| if x >= 0.0 { x } else { s * x }),
            Op::Sigmoid(a) => v(*a).map(sigmoid),
            Op::Softplus(a) => v(*a).map(softplus),
            Op::Log(a) => v(*a).map(f64::ln),
            Op::Exp(a) => v(*a).map(f64::exp),
            Op::Sqrt(a) => v(*a).map(f64::sqrt),
            Op::Scale(a, s) => v(*a).map(|x| s * x),
            Op::AddScalar(a, s) => v(*a).map(|x| x + s),
            Op::Mul(a, b) => zip_map(v(*a), v(*b), |x, y| x * y),
            Op::Affine { x, a, y, b } => zip_map(v(*x), v(*y), |p, q| a * p + b * q),
            Op::Sum(a) => Array::scalar(v(*a).data().iter().sum()),
            Op::SqNorm(a) => Array::scalar(v(*a).data().iter().map(|x| x * x).sum()),
            Op::RowSqNorm(a) => {
                let av = v(*a);
                let w = av.shape()[1];
                let d = av
                    .data()
                    .chunks(w.max(1))
                    .map(|r| r.iter().map(|x| x * x).sum())
                    .take(av.shape()[0])
                    .collect();
                Array::from_parts(shape, d)
            }
        };
        Ok(out)
    }

    fn leaf_for_grad(&self, name: &str) -> Result<NodeId> {
        let id = self
            .leaf_id(name)
            .ok_or_else(|| Error::UnknownLeaf(name.to_string()))?;
        match &self.nodes[id.0].op {
            Op::Leaf {
                kind: LeafKind::Constant,
                ..
            } => Err(Error::ConstantLeaf(name.to_string())),
            _ => Ok(id),
        }
    }

    /// Reverse pass from a scalar output. Returns the output value and the
    /// gradient with respect to each named leaf, in order.
    pub fn gradients(&self, inputs: &Inputs<'_>, wrt: &[&str]) -> Result<(f64, Vec<Array>)> {
        let (vals, grads) = self.backward(inputs, wrt)?;
        Ok((vals.get(self.output_id()?).data()[0], grads))
    }

    /// Like [`Tape::gradients`], but also hands back every node's forward value.
    pub fn backward(&self, inputs: &Inputs<'_>, wrt: &[&str]) -> Result<(Values, Vec<Array>)> {
        let targets = wrt
            .iter()
            .map(|n| self.leaf_for_grad(n))
            .collect::<Result<Vec<_>>>()?;
        let out = self.output_id()?;
        if self.nodes[out.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarOutput(self.nodes[out.0].shape.clone()));
        }
        let vals = self.forward(inputs)?;

        let mut needs = vec![false; self.nodes.len()];
        for t in &targets {
            needs[t.0] = true;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !needs[i] {
                needs[i] = node.op.inputs().iter().any(|p| needs[p.0]);
            }
        }

        let mut adj: Vec<Option<Array>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(Array::filled(&self.nodes[out.0].shape, 1.0));
        for i in (0..=out.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if let Op::Leaf { .. } = self.nodes[i].op {
                adj[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &vals, &needs, &mut adj);
        }

        let grads = targets
            .iter()
            .map(|t| {
                adj[t.0]
                    .clone()
                    .unwrap_or_else(|| Array::zeros(&self.nodes[t.0].shape))
            })
            .collect();
        Ok((vals, grads))
    }

    /// Gradient of the scalar output with respect to one leaf.
    pub fn gradient(&self, inputs: &Inputs<'_>, wrt: &str) -> Result<Array> {
        Ok(self.gradients(inputs, &[wrt])?.1.remove(0))
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Array,
        vals: &Values,
        needs: &[bool],
        adj: &mut [Option<Array>],
    ) {
        let node = &self.nodes[i];
        let y = vals.get(NodeId(i));
        let mut send = |id: NodeId, delta: Array| {
            if !needs[id.0] {
                return;
            }
            match &mut adj[id.0] {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(delta.data())
                    .for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let elementwise = |x: &Array, f: &dyn Fn(f64, f64) -> f64| -> Array {
            // f(input, output) -> local derivative
            Array::from_parts(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(y.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * f(xi, yi))
                    .collect(),
            )
        };
        match node.op {
            Op::Leaf { .. } | Op::Const(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (vals.get(a), vals.get(b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = if bv.shape().len() == 2 { bv.shape()[1] } else { 1 };
                if needs[a.0] {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                    send(a, Array::from_parts(av.shape().to_vec(), da));
                }
                if needs[b.0] {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                    send(b, Array::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let mut t = vec![0.0; r * c];
                for row in 0..r {
                    for col in 0..c {
                        t[col * r + row] = g.data()[row * c + col];
                    }
                }
                send(a, Array::from_parts(vec![c, r], t));
            }
            Op::BiasAdd(x, b) => {
                send(x, g.clone());
                if needs[b.0] {
                    let w = self.nodes[b.0].shape[0];
                    let mut db = vec![0.0; w];
                    for row in g.data().chunks(w) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    send(b, Array::vector(db));
                }
            }
            Op::LeakyRelu(a, s) => {
                send(a, elementwise(vals.get(a), &|x, _| if x >= 0.0 { 1.0 } else { s }))
            }
            Op::Sigmoid(a) => send(a, elementwise(vals.get(a), &|_, y| y * (1.0 - y))),
            Op::Softplus(a) => send(a, elementwise(vals.get(a), &|x, _| sigmoid(x))),
            Op::Log(a) => send(a, elementwise(vals.get(a), &|x, _| 1.0 / x)),
            Op::Exp(a) => send(a, elementwise(vals.get(a), &|_, y| y)),
            Op::Sqrt(a) => send(a, elementwise(vals.get(a), &|_, y| 0.5 / y)),
            Op::Scale(a, s) => send(a, g.map(|v| v * s)),
            Op::AddScalar(a, _) => send(a, g.clone()),
            Op::Mul(a, b) => {
                let (av, bv) = (vals.get(a), vals.get(b));
                if needs[a.0] {
                    send(a, zip_map(g, bv, |gi, bi| gi * bi));
                }
                if needs[b.0] {
                    send(b, zip_map(g, av, |gi, ai| gi * ai));
                }
            }
            Op::Affine { x, a, y: yy, b } => {
                if needs[x.0] {
                    send(x, g.map(|v| a * v));
                }
                if needs[yy.0] {
                    send(yy, g.map(|v| b * v));
                }
            }
            Op::Sum(a) => {
                send(a, Array::filled(&self.nodes[a.0].shape, g.data()[0]));
            }
            Op::SqNorm(a) => {
                let s = 2.0 * g.data()[0];
                send(a, vals.get(a).map(|x| s * x));
            }
            Op::RowSqNorm(a) => {
                let av = vals.get(a);
                let w = av.shape()[1];
                let mut d = av.data().to_vec();
                for (r, gi) in d.chunks_mut(w.max(1)).zip(g.data()) {
                    r.iter_mut().for_each(|x| *x *= 2.0 * gi);
                }
                send(a, Array::from_parts(av.shape().to_vec(), d));
            }
        }
    }

    /// Inputs to every leaky-ReLU node, used to detect kinks.
    pub(crate) fn kink_inputs(&self, vals: &Values) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a, _) => Some(vals.get(a).data().to_vec()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

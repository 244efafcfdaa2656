//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value and the ids of its
//! inputs. Because inputs must already exist when a node is pushed, the node
//! vector is in topological order and [`Tape::backward`] only has to walk it
//! once in reverse.

use std::fmt;
use std::str::FromStr;

use crate::conv::{self, ConvGeometry};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Largest double strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op families, used for instrumentation and for fault injection in
/// gradient-check negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Affine,
    Add,
    Hadamard,
    Sigmoid,
    Tanh,
    ScalarMul,
    Sum,
    Reshape,
    Concat,
    L1Loss,
    L2Loss,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::Affine,
        OpKind::Add,
        OpKind::Hadamard,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::ScalarMul,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::L1Loss,
        OpKind::L2Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Affine => "affine",
            OpKind::Add => "add",
            OpKind::Hadamard => "hadamard",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::L1Loss => "l1_loss",
            OpKind::L2Loss => "l2_loss",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown op `{s}`")))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    },
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ScalarMul(NodeId, f64),
    Sum(NodeId),
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    L1Loss {
        pred: NodeId,
        target: NodeId,
        frames: usize,
    },
    L2Loss {
        pred: NodeId,
        target: NodeId,
        frames: usize,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Affine { .. } => OpKind::Affine,
            Op::Add(..) => OpKind::Add,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::ScalarMul(..) => OpKind::ScalarMul,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Concat(_) => OpKind::Concat,
            Op::L1Loss { .. } => OpKind::L1Loss,
            Op::L2Loss { .. } => OpKind::L2Loss,
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, kernel, bias, ..
            } => vec![*input, *kernel, *bias],
            Op::Affine {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Add(a, b) | Op::Hadamard(a, b) => vec![*a, *b],
            Op::Sigmoid(a) | Op::Tanh(a) | Op::ScalarMul(a, _) | Op::Sum(a) | Op::Reshape(a) => {
                vec![*a]
            }
            Op::Concat(parts) => parts.clone(),
            Op::L1Loss { pred, target, .. } | Op::L2Loss { pred, target, .. } => {
                vec![*pred, *target]
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

/// Gradients of a scalar root with respect to every node that reaches it.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Scales the backward rule of every `kind` node by `scale`. Only useful
    /// for demonstrating that a gradient check catches a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind, scale: f64) {
        self.fault = Some((kind, scale));
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geometry = ConvGeometry::infer(x, k, b)?;
        let out = conv::forward(&geometry, x.data(), k.data(), b.data());
        let value = Tensor::new(vec![geometry.c_out, geometry.height, geometry.width], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
        ))
    }

    /// `weight · vec(input) + bias` with `weight` of shape `out × in`.
    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let ws = w.shape();
        if ws.len() != 2 || ws[1] != x.len() || b.shape() != [ws[0]] {
            return Err(shape_err(
                "affine",
                format!(
                    "input of {} values, weight {:?}, bias {:?}",
                    x.len(),
                    ws,
                    b.shape()
                ),
            ));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let xd = x.data();
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                let row = &w.data()[r * cols..(r + 1) * cols];
                b.data()[r] + row.iter().zip(xd).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let value = Tensor::new(vec![rows], out)?;
        Ok(self.push(
            value,
            Op::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn scalar_mul(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::ScalarMul(a, s))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&values)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Summed absolute error divided by `frames`.
    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId, frames: usize) -> Result<NodeId> {
        let value = Tensor::scalar(crate::loss::l1_with(
            self.value(pred),
            self.value(target),
            frames,
        )?);
        Ok(self.push(
            value,
            Op::L1Loss {
                pred,
                target,
                frames,
            },
        ))
    }

    /// Summed squared error divided by `frames`.
    pub fn l2_loss(&mut self, pred: NodeId, target: NodeId, frames: usize) -> Result<NodeId> {
        let value = Tensor::scalar(crate::loss::l2_with(
            self.value(pred),
            self.value(target),
            frames,
        )?);
        Ok(self.push(
            value,
            Op::L2Loss {
                pred,
                target,
                frames,
            },
        ))
    }

    fn zip(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        x.check_same_shape(op, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// True when `output` is reachable from `input` through recorded ops.
    pub fn depends_on(&self, output: NodeId, input: NodeId) -> bool {
        if input > output {
            return false;
        }
        let mut seen = vec![false; output.0 + 1];
        let mut stack = vec![output];
        while let Some(n) = stack.pop() {
            if n == input {
                return true;
            }
            if std::mem::replace(&mut seen[n.0], true) {
                continue;
            }
            stack.extend(
                self.nodes[n.0]
                    .op
                    .inputs()
                    .into_iter()
                    .filter(|&i| i >= input),
            );
        }
        false
    }

    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be scalar, got shape {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for idx in (0..=root.0).rev() {
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some((kind, scale)) = self.fault {
                if node.op.kind() == kind {
                    g = g.map(|v| v * scale);
                }
            }
            for (input, contribution) in self.local_grads(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let gd = g.data();
        let like = |id: NodeId, data: Vec<f64>| {
            Tensor::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let grads = conv::backward(
                    geometry,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                );
                vec![
                    (*input, like(*input, grads.input)),
                    (*kernel, like(*kernel, grads.kernel)),
                    (*bias, like(*bias, grads.bias)),
                ]
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input).data();
                let w = self.value(*weight);
                let (rows, cols) = (w.shape()[0], w.shape()[1]);
                let mut dx = vec![0.0; cols];
                let mut dw = vec![0.0; rows * cols];
                for r in 0..rows {
                    let gr = gd[r];
                    let wrow = &w.data()[r * cols..(r + 1) * cols];
                    let dwrow = &mut dw[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        dx[c] += wrow[c] * gr;
                        dwrow[c] = x[c] * gr;
                    }
                }
                vec![
                    (*input, like(*input, dx)),
                    (*weight, like(*weight, dw)),
                    (*bias, like(*bias, gd.to_vec())),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Hadamard(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(x).map(|(g, x)| g * x).collect();
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                vec![(*a, like(*a, d))]
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                vec![(*a, like(*a, d))]
            }
            Op::ScalarMul(a, s) => vec![(*a, g.map(|v| v * s))],
            Op::Sum(a) => vec![(*a, Tensor::full(self.value(*a).shape(), gd[0]))],
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = self.value(p).len();
                        let slice = gd[offset..offset + n].to_vec();
                        offset += n;
                        (p, like(p, slice))
                    })
                    .collect()
            }
            Op::L1Loss {
                pred,
                target,
                frames,
            } => {
                let scale = gd[0] / *frames as f64;
                let d: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .map(|(p, t)| sign(p - t) * scale)
                    .collect();
                let neg = d.iter().map(|v| -v).collect();
                vec![(*pred, like(*pred, d)), (*target, like(*target, neg))]
            }
            Op::L2Loss {
                pred,
                target,
                frames,
            } => {
                let scale = 2.0 * gd[0] / *frames as f64;
                let d: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .map(|(p, t)| (p - t) * scale)
                    .collect();
                let neg = d.iter().map(|v| -v).collect();
                vec![(*pred, like(*pred, d)), (*target, like(*target, neg))]
            }
        }
    }
}

/// sign with sign(0) = 0.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Logistic function, kept inside the open interval (0, 1) even where the
/// exact value is not representable.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Hyperbolic tangent kept inside (-1, 1).
pub fn tanh(x: f64) -> f64 {
    x.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::ConvGeom;
use super::{AdError, Tensor};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Narrow { src: Var, axis: usize, start: usize },
    Concat { srcs: Vec<Var>, axis: usize },
    Tanh(Var),
    SoftmaxRows(Var),
    Sum(Var),
    SqL2(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, col: Vec<f64> },
    Conv1x1 { x: Var, w: Var, b: Var },
    Resize { x: Var },
    Rodrigues(Var),
    Project { points: Var, t: Var, focal: f64 },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Reverse-mode tape.
///
/// Built with [`Graph::new`] it records parents for every node that depends
/// on a parameter. Built with [`Graph::no_grad`] it only evaluates values;
/// parameters registered there behave as constants.
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    record: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let requires_grad = self.record;
        self.push_node(value, requires_grad, Op::Leaf)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, false, Op::Leaf)
    }

    /// Copies `v`'s value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push_node(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node; parents are only kept when some input needs a gradient.
    pub(crate) fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_node(value, requires_grad, op)
    }

    /// Accumulates `∂loss/∂node` into every node reachable from `loss` that
    /// requires a gradient. Gradients add onto whatever a previous call left
    /// behind; call [`Graph::zero_grad`] first to start clean.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(AdError::NonScalarRoot(root.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(Tensor::full(root.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else {
                continue;
            };
            super::ops::backprop(&self.nodes, i, &g, &mut pending);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

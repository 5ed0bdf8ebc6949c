use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use super::ste::{SteMode, TgfConfig};
use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward pass.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError>;

    /// Returns one gradient buffer per input (`None` for no contribution).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    /// rhs is a vector broadcast against the rows of lhs
    RhsRows,
    /// lhs is a vector broadcast against the rows of rhs
    LhsRows,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, f64),
    MatMul(Var, Var),
    Clip(Var, f64, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Square(Var),
    CrossEntropy(Var, Vec<usize>),
    Bce(Var, Vec<f64>),
    SumLast(Var),
    ProdLast(Var),
    AvgLast(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    ProductGather(Vec<Var>, Vec<Vec<(usize, usize)>>),
    Binarize(Var, SteMode),
    Tgf(Var, TgfConfig),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records operations for one forward/backward pass.
///
/// Not `Sync`: build and differentiate a graph on one thread. Separate graphs
/// are independent.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => parents(other).iter().any(|p| self.node_requires_grad(*p)),
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn node_requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// A differentiable input (parameter or network output).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node_requires_grad(v)
    }

    /// Reverse-mode pass from a 0-dimensional `loss`. Gradients accumulate in
    /// reverse creation order, so identical graphs give bit-identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed.get() {
            return Err(TensorError::Consumed);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if !loss_shape.is_empty() {
            return Err(TensorError::NotScalar(loss_shape.to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                for (parent, contrib) in super::ops::backward_op(&nodes, node, &g) {
                    if !nodes[parent.0].requires_grad {
                        continue;
                    }
                    match &mut grads[parent.0] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

pub(crate) fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Constant => vec![],
        Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::MatMul(a, b) => vec![*a, *b],
        Op::Affine(a, _)
        | Op::Clip(a, _, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Softmax(a)
        | Op::Square(a)
        | Op::CrossEntropy(a, _)
        | Op::Bce(a, _)
        | Op::SumLast(a)
        | Op::ProdLast(a)
        | Op::AvgLast(a)
        | Op::Reshape(a)
        | Op::Gather(a, _)
        | Op::Binarize(a, _)
        | Op::Tgf(a, _) => vec![*a],
        Op::ProductGather(inputs, _) | Op::Custom(inputs, _) => inputs.clone(),
    }
}

/// Gradients of a loss with respect to every node that required one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when no path from the loss reaches it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when unreachable.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

use std::cell::RefCell;
use std::sync::Arc;

use super::{DiffError, Tensor};

/// Backward rule of a recorded operation.
///
/// `inputs` are the parent values in the order they were recorded, `output` is
/// the forward value and `grad` is the upstream gradient (same shape as
/// `output`). Implementations return one entry per parent; `None` means the
/// parent receives no contribution.
pub trait Backward {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Append-only record of a computation. One tape per step; nodes are stored in
/// creation order, which is a topological order by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
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

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Constant: never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Arc::new(value), Vec::new(), None, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Records the result of a custom operation. The backward rule is dropped
    /// when no parent requires a gradient.
    pub fn push_op<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        op: Box<dyn Backward>,
    ) -> Var<'t> {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let ids = parents.iter().map(|p| p.id).collect();
        if requires_grad {
            self.push_node(Arc::new(value), ids, Some(op), true)
        } else {
            self.push_node(Arc::new(value), Vec::new(), None, false)
        }
    }

    fn push_node(
        &self,
        value: Arc<Tensor>,
        parents: Vec<usize>,
        op: Option<Box<dyn Backward>>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, DiffError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(DiffError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::ones(loss_value.shape()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let parent_grads = op.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", op.name());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "{}", op.name());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}

/// Gradients of a loss with respect to the leaves of its tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for constants and for leaves the loss does not reach.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with zeros substituted for unreachable leaves.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        self.grads
            .get_mut(var.id)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

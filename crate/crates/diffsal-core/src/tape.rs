//! Reverse-mode autodiff tape.
//!
//! Forward operations append nodes in execution order; [`Tape::backward`]
//! walks the recorded nodes once in reverse, pushing cotangents from each
//! output to its parents. A node's backward rule is a closure that reads
//! parent values through the tape and returns one cotangent contribution per
//! parent; the driver owns all accumulation, so rules stay pure.
//!
//! Gradients accumulate across repeated backward calls until
//! [`Tape::clear_grads`] is called.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor stored on a tape. Valid only for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Backward rule: given the tape and the output cotangent, produce
/// `(parent, contribution)` pairs. Contributions must match parent shapes.
pub(crate) type BackwardFn = Box<dyn Fn(&Tape, &[f64]) -> Vec<(TensorId, Vec<f64>)>>;

pub(crate) struct Node {
    pub tensor: Tensor,
    pub backward: Option<BackwardFn>,
}

/// Wengert list of tensors and their backward rules.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    /// Memo for external parameter binding: store key -> leaf id.
    pub(crate) bound: HashMap<usize, TensorId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// backward will accumulate a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, None)
    }

    /// Register an input that wants a gradient.
    pub fn var(&mut self, mut tensor: Tensor) -> TensorId {
        tensor.requires_grad = true;
        self.push(tensor, None)
    }

    /// Register an input that never gets a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> TensorId {
        tensor.requires_grad = false;
        self.push(tensor, None)
    }

    pub(crate) fn push(&mut self, tensor: Tensor, backward: Option<BackwardFn>) -> TensorId {
        self.nodes.push(Node { tensor, backward });
        TensorId(self.nodes.len() - 1)
    }

    /// Append an op-result node. The output requires a gradient iff any
    /// parent does; the backward rule is dropped otherwise.
    pub(crate) fn push_op(
        &mut self,
        mut tensor: Tensor,
        parents: &[TensorId],
        backward: BackwardFn,
    ) -> TensorId {
        let needs = parents.iter().any(|&p| self.nodes[p.0].tensor.requires_grad);
        tensor.requires_grad = needs;
        let backward = if needs { Some(backward) } else { None };
        self.push(tensor, backward)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub(crate) fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    /// Whether backward needs a cotangent for this node.
    pub fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    /// Accumulated gradient of a `requires_grad` tensor, if backward reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn clear_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    /// Reverse sweep from a scalar output.
    ///
    /// Accumulates `d loss / d x` into `grad` for every `requires_grad`
    /// tensor that `loss` depends on.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let loss_node = &self.nodes[loss.0].tensor;
        if loss_node.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss_node.shape),
            ));
        }
        if !loss_node.data[0].is_finite() {
            return Err(Error::invalid(
                "backward",
                format!("loss is not finite: {}", loss_node.data[0]),
            ));
        }

        let mut cotangent: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        cotangent[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(cot) = cotangent[id].take() else {
                continue;
            };
            if !self.nodes[id].tensor.requires_grad {
                continue;
            }
            // Record the gradient on the node itself.
            match &mut self.nodes[id].tensor.grad {
                Some(g) => {
                    for (gi, ci) in g.iter_mut().zip(&cot) {
                        *gi += ci;
                    }
                }
                slot @ None => *slot = Some(cot.clone()),
            }
            // Take the rule out so the closure can read the tape immutably.
            let Some(rule) = self.nodes[id].backward.take() else {
                continue;
            };
            let contributions = rule(self, &cot);
            self.nodes[id].backward = Some(rule);
            for (parent, contrib) in contributions {
                debug_assert!(parent.0 < id, "backward rule must point at earlier nodes");
                if !self.nodes[parent.0].tensor.requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.len(), self.nodes[parent.0].tensor.len());
                match &mut cotangent[parent.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn leaf_gradient_of_identity_is_one() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        tape.backward(x).unwrap();
        tape.backward(x).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
        tape.clear_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.var(Tensor::scalar(2.0));
        let y = tape.mul(c, x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[5.0]);
    }
}

//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every value produced during a forward pass is appended to a [`Tape`] as a
//! node. Nodes only ever reference earlier nodes, so the tape order is a
//! topological order and the reverse sweep is a single backwards walk over
//! node indices.
//!
//! Operators carry their own backward rule as a boxed [`Backward`]. Callers
//! that need a non-standard gradient (straight-through estimators, clipped
//! thresholds) record their forward value through [`Tape::record`] with a
//! custom rule; the rule is attached to that node only.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Must return exactly one entry per input, in input order. `None` means
/// "no gradient flows to this input".
pub trait Backward {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, cotangent: &Tensor)
        -> Vec<Option<Tensor>>;
}

impl<F> Backward for F
where
    F: Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>>,
{
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        cotangent: &Tensor,
    ) -> Vec<Option<Tensor>> {
        self(inputs, output, cotangent)
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
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

    /// Leaf node. Gradients are retained for leaves with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            requires_grad,
            inputs: Vec::new(),
            op: None,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records an operation result with its backward rule.
    ///
    /// The node requires grad iff any input does; otherwise the rule is
    /// dropped.
    pub fn record(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn Backward>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            requires_grad,
            inputs: inputs.to_vec(),
            op: requires_grad.then_some(op),
        })
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(cotangent) = grads[idx].as_ref() else { continue };

            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, cotangent);
            if input_grads.len() != node.inputs.len() {
                return Err(Error::invalid(format!(
                    "backward rule of node {idx} returned {} cotangents for {} inputs",
                    input_grads.len(),
                    node.inputs.len()
                )));
            }

            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                let target = &self.nodes[input.0];
                if !target.requires_grad {
                    continue;
                }
                if g.shape() != target.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "backward",
                        lhs: target.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        self.grads = grads;
        Ok(())
    }
}

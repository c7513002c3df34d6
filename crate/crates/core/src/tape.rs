//! Append-only computation record for reverse-mode differentiation.
//!
//! Every differentiable operation evaluates its forward value eagerly and
//! pushes one node holding that value, handles to its inputs, and a
//! [`Backward`] rule. Nodes are only ever appended, so inputs always precede
//! their consumers and a single reverse sweep visits each node once.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    /// Maps the gradient of the node's output to gradients of its inputs.
    ///
    /// `needs[i]` is false when input `i` does not lead to any differentiable
    /// leaf; the rule may return `None` for such inputs and skip the work.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Non-differentiable leaf (data, targets, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Checks that `v` was created by this tape.
    pub fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(())
    }

    /// Records an operation whose forward value has already been computed.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        rule: impl Backward<T> + 'static,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        let rule: Option<Box<dyn Backward<T>>> = if requires_grad {
            Some(Box::new(rule))
        } else {
            None
        };
        Ok(self.push_node(value, inputs.to_vec(), rule, requires_grad))
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        rule: Option<Box<dyn Backward<T>>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            rule,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.index].value;
        if !loss_value.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(Tensor::full(loss_value.shape(), T::one()));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|v| &self.nodes[v.index].value)
                .collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.index].requires_grad)
                .collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad, &needs)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", rule.name());
            for ((input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if g.shape() != self.nodes[input.index].value.shape() {
                    return Err(Error::Contract {
                        op: rule.name(),
                        detail: format!(
                            "backward produced gradient of shape {:?} for input of shape {:?}",
                            g.shape(),
                            self.nodes[input.index].value.shape()
                        ),
                    });
                }
                match &mut grads[input.index] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    /// Gradient of `loss` with respect to each of `wrt`, zero for unused ones.
    pub fn gradients(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>> {
        for &v in wrt {
            self.check(v)?;
        }
        let grads = self.backward(loss)?;
        Ok(wrt
            .iter()
            .map(|&v| grads.wrt(v, self.value(v).shape()))
            .collect())
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, if any path from it reached the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    fn wrt(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

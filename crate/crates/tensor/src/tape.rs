//! Tape-based reverse-mode differentiation.
//!
//! Every [`Tensor`] is a handle onto a node recorded on a [`Tape`]. Nodes are
//! appended in creation order, so walking the tape backwards visits every node
//! after all of its consumers, which is all `backward` needs.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::array::Array;
use crate::error::{Result, TensorError};

/// Inputs available to a node's gradient rule.
pub(crate) struct GradCtx<'a> {
    pub inputs: Vec<&'a Array>,
    pub output: &'a Array,
    pub grad: &'a [f64],
    pub needs: Vec<bool>,
}

impl GradCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub(crate) type GradFn = Box<dyn Fn(&GradCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Array>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn>,
}

/// Recording of a differentiable computation.
///
/// A tape is single-owner: clones share the same recording and must stay on
/// one thread. Independent computations should use independent tapes.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
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

    pub fn leaf(&self, value: Array, requires_grad: bool) -> Tensor {
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            grad: None,
            parents: Vec::new(),
            grad_fn: None,
        })
    }

    /// A trainable leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Array) -> Tensor {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Array) -> Tensor {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.constant(Array::scalar(value))
    }

    fn push(&self, node: Node) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Tensor {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn record(&self, value: Array, parents: &[&Tensor], grad_fn: GradFn) -> Tensor {
        let ids: Vec<usize> = parents.iter().map(|t| t.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            grad: None,
            parents: ids,
            grad_fn: requires_grad.then_some(grad_fn),
        })
    }

    /// Accumulates d`loss`/d`leaf` into every reachable leaf that requires a
    /// gradient. Calling it again adds to the stored gradients; see
    /// [`Tape::zero_grad`].
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !Rc::ptr_eq(&self.nodes, &loss.tape.nodes) {
            return Err(TensorError::Contract(
                "loss was recorded on a different tape".into(),
            ));
        }
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Ok(());
        }

        let mut pending: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        pending[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(grad_fn) = node.grad_fn.as_ref() else {
                if node.requires_grad && node.parents.is_empty() {
                    let leaf = &mut nodes[id];
                    match leaf.grad.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => leaf.grad = Some(grad),
                    }
                }
                continue;
            };
            let ctx = GradCtx {
                inputs: node.parents.iter().map(|&p| &*nodes[p].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = grad_fn(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[p].value.len());
                match pending[p].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => pending[p] = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Clears all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

/// Handle onto a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tensor {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub(crate) fn value_rc(&self) -> Rc<Array> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn value(&self) -> Array {
        (*self.value_rc()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_rc().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.value_rc();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        v.data()[0]
    }

    /// Accumulated gradient of a leaf, if any has been computed.
    pub fn grad(&self) -> Option<Array> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Array::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub(crate) fn same_tape(&self, other: &Tensor) -> Result<()> {
        if Rc::ptr_eq(&self.tape.nodes, &other.tape.nodes) {
            Ok(())
        } else {
            Err(TensorError::Contract(
                "operands were recorded on different tapes".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![1.0, 2.0, 3.0]));
        let loss = x.sum();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![1.0, -2.0, 3.0]));
        let loss = x.mul(&x).unwrap().sum();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![1.0, -2.0]));
        let loss = x.square().sum();
        tape.backward(&loss).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, -8.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(&x),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Array::from_vec(vec![1.0, 2.0]));
        let x = tape.param(Array::from_vec(vec![3.0, 4.0]));
        let loss = c.mul(&x).unwrap().sum();
        tape.backward(&loss).unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap().data(), &[1.0, 2.0]);
    }
}

//! Single-use reverse-mode tape.
//!
//! Every primitive records its output value, the indices of its inputs and a
//! closure mapping the upstream gradient to one gradient per input. Nodes are
//! appended in execution order, so the node list is already topologically
//! sorted and backward is a single reverse sweep.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::Tensor;
use crate::{Error, Result, Scalar};

/// Maps the upstream gradient to per-input gradients. The second argument
/// flags which inputs actually need one; entries for the others may be `None`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    /// Records an input. Non-finite leaves are rejected.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        Ok(self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        }))
    }

    pub fn param(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records the result of a primitive. `backward` is dropped when no input
    /// requires a gradient.
    pub fn record(
        &self,
        op: &'static str,
        parents: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        Ok(self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        }))
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Propagates `∂loss/∂·` to every leaf that requires a gradient. The tape
    /// cannot be reused afterwards.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&upstream, &needs)?;
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                if g.shape() != nodes[p].value.shape() {
                    return Err(Error::shape(
                        "backward",
                        format!(
                            "gradient {:?} for value {:?}",
                            g.shape(),
                            nodes[p].value.shape()
                        ),
                    ));
                }
                match &mut grads[p] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn second_backward_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0)).unwrap();
        let y = tape.sum(x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        assert!(!tape.is_consumed());
    }

    #[test]
    fn non_finite_leaf_is_rejected() {
        let tape = Tape::<f64>::new();
        let bad = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        assert!(matches!(tape.leaf(bad, true), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let c = tape.constant(Tensor::scalar(5.0)).unwrap();
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(4.0)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 9.0);
    }
}

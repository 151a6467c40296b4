use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient rule of a recorded operation. Receives the output gradient and a
/// mask saying which parents need gradients; returns one optional gradient
/// per parent, in the parent order the op was recorded with.
pub(crate) type BackFn<S> = Box<dyn FnOnce(&[S], &[bool]) -> Vec<Option<Vec<S>>>>;

pub(crate) struct Node<S: Scalar> {
    id: u64,
    shape: Shape,
    grad: RefCell<Option<Vec<S>>>,
    parents: Vec<Option<Rc<Node<S>>>>,
    backward: RefCell<Option<BackFn<S>>>,
}

/// Dense N x C x H x W tensor. Data is immutable after creation; cloning is
/// cheap and shares both the buffer and the autograd node.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Arc<Vec<S>>,
    node: Option<Rc<Node<S>>>,
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<S>) -> Result<Tensor<S>> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                context: "tensor construction",
                expected: format!("{} elements for shape {}", shape.numel(), shape),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Tensor<S> {
        let shape = shape.into();
        Tensor {
            shape,
            data: Arc::new(vec![S::ZERO; shape.numel()]),
            node: None,
        }
    }

    pub fn full(shape: impl Into<Shape>, value: S) -> Tensor<S> {
        let shape = shape.into();
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
            node: None,
        }
    }

    pub fn scalar(value: S) -> Tensor<S> {
        Tensor::full((1, 1, 1, 1), value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    /// Scalar value of a 1x1x1x1 tensor.
    pub fn item(&self) -> Result<S> {
        if !self.shape.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "item() requires a 1x1x1x1 tensor, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Mark this tensor as a differentiation leaf. Gradients accumulate into
    /// it on `backward`.
    pub fn requires_grad(mut self) -> Tensor<S> {
        if self.node.is_none() {
            self.node = Some(Rc::new(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.shape,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: RefCell::new(None),
            }));
        }
        self
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Copy of the data without autograd participation.
    pub fn detach(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.as_ref().and_then(|n| n.grad.borrow().clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Record the result of a differentiable operation.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<S>,
        parents: &[&Tensor<S>],
        back: BackFn<S>,
    ) -> Tensor<S> {
        debug_assert_eq!(data.len(), shape.numel());
        let tracked = parents.iter().any(|p| p.node.is_some());
        let node = tracked.then(|| {
            Rc::new(Node {
                id: NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                grad: RefCell::new(None),
                parents: parents.iter().map(|p| p.node.clone()).collect(),
                backward: RefCell::new(Some(back)),
            })
        });
        Tensor {
            shape,
            data: Arc::new(data),
            node,
        }
    }
}

fn accumulate<S: Scalar>(cell: &RefCell<Option<Vec<S>>>, contribution: Vec<S>) {
    let mut slot = cell.borrow_mut();
    match slot.as_mut() {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contribution) {
                *a += *c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Reverse-mode gradient propagation from a scalar root. Each recorded
/// operation fires exactly once; a second backward over the same graph is an
/// error.
pub fn backward<S: Scalar>(root: &Tensor<S>) -> Result<()> {
    if !root.shape.is_scalar() {
        return Err(Error::Autograd(format!(
            "backward requires a scalar (1x1x1x1) root, got {}",
            root.shape
        )));
    }
    let root_node = match &root.node {
        Some(n) => Rc::clone(n),
        None => {
            return Err(Error::Autograd(
                "backward on a tensor with no recorded graph".into(),
            ))
        }
    };

    // Iterative post-order DFS for a topological order (children after all
    // their parents is not required here; we need each node before every
    // node it feeds, i.e. reverse post-order from the root).
    let mut order: Vec<Rc<Node<S>>> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Rc<Node<S>>, usize)> = vec![(Rc::clone(&root_node), 0)];
    visited.insert(root_node.id, ());
    while let Some((node, child_idx)) = stack.pop() {
        if child_idx < node.parents.len() {
            stack.push((Rc::clone(&node), child_idx + 1));
            if let Some(parent) = &node.parents[child_idx] {
                if !visited.contains_key(&parent.id) {
                    visited.insert(parent.id, ());
                    stack.push((Rc::clone(parent), 0));
                }
            }
        } else {
            order.push(node);
        }
    }

    accumulate(&root_node.grad, vec![S::ONE]);

    let mut fired_any = false;
    for node in order.iter().rev() {
        let back = node.backward.borrow_mut().take();
        let Some(back) = back else {
            if node.parents.is_empty() {
                continue; // leaf
            }
            return Err(Error::Autograd(
                "backward already called on this graph".into(),
            ));
        };
        fired_any = true;
        let grad = node
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![S::ZERO; node.shape.numel()]);
        let mask: Vec<bool> = node.parents.iter().map(|p| p.is_some()).collect();
        let contributions = back(&grad, &mask);
        debug_assert_eq!(contributions.len(), node.parents.len());
        for (parent, contribution) in node.parents.iter().zip(contributions) {
            if let (Some(parent), Some(contribution)) = (parent, contribution) {
                debug_assert_eq!(contribution.len(), parent.shape.numel());
                accumulate(&parent.grad, contribution);
            }
        }
    }
    if !fired_any && !root_node.parents.is_empty() {
        return Err(Error::Autograd(
            "backward already called on this graph".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn leaf_grad_none_before_backward() {
        let t = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![1.0, 2.0])
            .unwrap()
            .requires_grad();
        assert!(t.grad().is_none());
        assert!(t.is_tracked());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let t = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![1.0, 2.0])
            .unwrap()
            .requires_grad();
        let y = ops::scale(&t, 2.0);
        assert!(matches!(backward(&y), Err(Error::Autograd(_))));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let t = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![1.0, 2.0])
            .unwrap()
            .requires_grad();
        let y = ops::sum_all(&ops::scale(&t, 3.0));
        backward(&y).unwrap();
        assert!(matches!(backward(&y), Err(Error::Autograd(_))));
    }

    #[test]
    fn gradient_accumulates_over_shared_input() {
        // y = sum(x*2) + sum(x*3) => dy/dx = 5 everywhere.
        let x = Tensor::<f64>::from_vec((1, 1, 1, 3), vec![1.0, -2.0, 0.5])
            .unwrap()
            .requires_grad();
        let a = ops::sum_all(&ops::scale(&x, 2.0));
        let b = ops::sum_all(&ops::scale(&x, 3.0));
        let y = ops::add(&a, &b).unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn untracked_inputs_get_no_grad() {
        let x = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let y = ops::sum_all(&ops::scale(&x, 2.0));
        assert!(!y.is_tracked());
        assert!(backward(&y).is_err());
    }
}

//! Minimal deterministic tensor library with reverse-mode autodiff.
//!
//! Tensors form an acyclic graph (child holds `Rc`s to its parents);
//! [`Tensor::backward`] walks the graph in reverse topological order and
//! accumulates gradients into every reachable tensor that requires them.
//! A graph is confined to one thread; distinct graphs may run concurrently.

pub mod checkpoint;
pub mod ops;
pub mod optim;

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{MatteError, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Gradient computation for a single op. Receives the output gradient and
/// output data, and accumulates into the parents' gradient slots.
pub trait BackwardFn<S: Scalar> {
    fn backward(&self, grad_out: &[S], out_data: &[S], parents: &[Tensor<S>]);
}

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<S>>>,
    parents: Vec<Tensor<S>>,
    backward: Option<Box<dyn BackwardFn<S>>>,
}

#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Tensor<S> {
    fn new(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward: Option<Box<dyn BackwardFn<S>>>,
    ) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Leaf tensor that does not require gradients.
    pub fn constant(shape: Vec<usize>, data: Vec<S>) -> Self {
        Tensor::new(shape, data, false, Vec::new(), None)
    }

    /// Leaf tensor holding a learnable parameter.
    pub fn param(shape: Vec<usize>, data: Vec<S>) -> Self {
        Tensor::new(shape, data, true, Vec::new(), None)
    }

    pub fn scalar(v: S) -> Self {
        Tensor::constant(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::constant(shape, vec![S::zero(); n])
    }

    /// Non-leaf tensor produced by an op. The backward function is kept only
    /// when some parent requires gradients.
    pub fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: Box<dyn BackwardFn<S>>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let backward = if requires_grad { Some(backward) } else { None };
        Tensor::new(shape, data, requires_grad, parents, backward)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<S>> {
        self.inner.data.borrow_mut()
    }

    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Adds a contribution to this tensor's gradient, allocating zeros on
    /// first use. No-op when the tensor does not require gradients.
    pub fn accumulate_grad(&self, contribution: &[S]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        let grad = slot.get_or_insert_with(|| vec![S::zero(); self.numel()]);
        debug_assert_eq!(grad.len(), contribution.len());
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += *c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode gradient accumulation from a scalar loss. Repeated use of
    /// a tensor in the graph sums its gradient contributions; the traversal
    /// order is deterministic given an identical graph.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(MatteError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(&[S::one()]);
        // Reverse post-order: every node is visited before its parents and
        // after all of its children, so grad_out is complete when read.
        for node in order.iter().rev() {
            if let Some(back) = &node.inner.backward {
                let grad = node.inner.grad.borrow();
                let Some(grad) = grad.as_ref() else { continue };
                let data = node.inner.data.borrow();
                back.backward(grad, &data, &node.inner.parents);
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<S>> {
        enum Visit<S: Scalar> {
            Enter(Tensor<S>),
            Exit(Tensor<S>),
        }
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![Visit::Enter(self.clone())];
        while let Some(step) = stack.pop() {
            match step {
                Visit::Enter(t) => {
                    if visited.insert(t.id()) {
                        stack.push(Visit::Exit(t.clone()));
                        for p in &t.inner.parents {
                            if p.requires_grad() && !visited.contains(&p.id()) {
                                stack.push(Visit::Enter(p.clone()));
                            }
                        }
                    }
                }
                Visit::Exit(t) => order.push(t),
            }
        }
        order
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! Each operation records its parents and a closure that routes the output
//! gradient to them; `Var::backward` walks the graph once in reverse
//! topological order. Graphs are rebuilt every step.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use super::{Real, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Var<T>])>;

pub struct VarNode<T: Real> {
    value: Tensor<T>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A node in the computation graph. Cheap to clone (shared pointer).
pub struct Var<T: Real>(Rc<VarNode<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    /// A trainable leaf: gradients accumulate here.
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(VarNode {
            value,
            grad: RefCell::new(None),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A non-trainable input.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(VarNode {
            value,
            grad: RefCell::new(None),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub(super) fn from_op(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&Tensor<T>, &[Var<T>]) + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Var(Rc::new(VarNode {
            value,
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient of a leaf (or any node) after `backward`.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub(super) fn accumulate(&self, delta: &Tensor<T>) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g.add_scaled(delta, T::ONE),
            None => *slot = Some(delta.clone()),
        }
    }

    fn ptr(&self) -> *const VarNode<T> {
        Rc::as_ptr(&self.0)
    }

    /// Run reverse-mode accumulation from this scalar node.
    pub fn backward(&self) {
        assert_eq!(
            self.value().len(),
            1,
            "backward requires a scalar output, got shape {:?}",
            self.shape()
        );
        let order = self.topo_order();
        self.accumulate(&Tensor::full(self.value().shape().to_vec(), T::ONE));
        for node in order.iter().rev() {
            if !node.requires_grad() {
                continue;
            }
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow().clone();
            if let Some(grad) = grad {
                backward(&grad, &node.0.parents);
                if !node.0.parents.is_empty() {
                    // Interior gradients are not needed after propagation.
                    *node.0.grad.borrow_mut() = None;
                }
            }
        }
    }

    /// Parents-first topological order ending at `self`.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut visited: HashSet<*const VarNode<T>> = HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Var<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr());
        while let Some((node, child)) = stack.pop() {
            if child < node.0.parents.len() {
                let parent = node.0.parents[child].clone();
                stack.push((node, child + 1));
                if visited.insert(parent.ptr()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

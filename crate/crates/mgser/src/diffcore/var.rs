use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::diffcore::{DiffError, Scalar, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

pub struct VarNode<T: Scalar> {
    value: RefCell<Tensor<T>>,
    grad: RefCell<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
}

/// Handle to one node of the eagerly built computation graph. Cloning is
/// cheap and shares the node. Graphs are rebuilt every forward pass;
/// leaf nodes (parameters) persist across passes.
pub struct Var<T: Scalar>(Rc<VarNode<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Var<T> {
    /// A node that never receives gradient (input data).
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(VarNode {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            needs_grad: false,
        }))
    }

    /// A trainable leaf. Gradient is written here by `backward`.
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(VarNode {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            needs_grad: true,
        }))
    }

    pub(crate) fn from_op(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        debug_assert!(value.all_finite(), "non-finite values out of a forward op");
        let needs_grad = parents.iter().any(|p| p.needs_grad());
        Var(Rc::new(VarNode {
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents,
            backward: if needs_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            needs_grad,
        }))
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        self.0.value.borrow()
    }

    pub fn clone_value(&self) -> Tensor<T> {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    /// Replace the stored value. Used by optimizers and the
    /// finite-difference verifier; shape must be unchanged.
    pub fn set_value(&self, value: Tensor<T>) {
        let mut v = self.0.value.borrow_mut();
        assert_eq!(v.shape(), value.shape(), "set_value must preserve shape");
        *v = value;
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    fn ptr(&self) -> *const VarNode<T> {
        Rc::as_ptr(&self.0)
    }

    fn accumulate_grad(&self, g: &Tensor<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.add_in_place(g),
            None => {
                let mut z = Tensor::zeros(self.0.value.borrow().shape());
                z.add_in_place(g);
                *slot = Some(z);
            }
        }
    }

    /// Reverse-mode gradient pass from a scalar output. Gradients of every
    /// reachable node are reset first, so successive calls do not
    /// accumulate across graphs.
    pub fn backward(&self) -> Result<(), DiffError> {
        if self.0.value.borrow().len() != 1 {
            return Err(DiffError::NonScalarOutput {
                shape: self.shape(),
            });
        }
        let order = self.topo_order();
        for node in &order {
            *node.grad.borrow_mut() = None;
        }
        *self.0.grad.borrow_mut() = Some(Tensor::full(&self.shape(), T::one()));
        for node in order.iter().rev() {
            if !node.needs_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let grad = node.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if parent.needs_grad() {
                        parent.accumulate_grad(&pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Iterative post-order DFS: every node appears after all its parents.
    fn topo_order(&self) -> Vec<Rc<VarNode<T>>> {
        let mut order: Vec<Rc<VarNode<T>>> = Vec::new();
        let mut seen: HashSet<*const VarNode<T>> = HashSet::new();
        // (node, child_index) stack
        let mut stack: Vec<(Var<T>, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.ptr());
        while let Some((node, idx)) = stack.pop() {
            if idx < node.0.parents.len() {
                let parent = node.0.parents[idx].clone();
                stack.push((node, idx + 1));
                if seen.insert(parent.ptr()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(Rc::clone(&node.0));
            }
        }
        order
    }
}

/// A named trainable tensor.
pub struct Param<T: Scalar> {
    pub name: String,
    var: Var<T>,
}

impl<T: Scalar> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param {
            name: self.name.clone(),
            var: self.var.clone(),
        }
    }
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            var: Var::leaf(value),
        }
    }

    pub fn var(&self) -> &Var<T> {
        &self.var
    }

    pub fn value(&self) -> Tensor<T> {
        self.var.clone_value()
    }

    pub fn set_value(&self, value: Tensor<T>) {
        self.var.set_value(value)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.var.grad()
    }
}

/// Ordered collection of a model's parameters. Names are unique; order is
/// the registration order and is deterministic, which checkpointing and
/// the optimizer both rely on.
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var<T> {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let p = Param::new(name, value);
        let var = p.var().clone();
        self.params.push(p);
        var
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value()).collect()
    }

    pub fn restore(&self, snapshot: &[Tensor<T>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, v) in self.params.iter().zip(snapshot) {
            p.set_value(v.clone());
        }
    }
}

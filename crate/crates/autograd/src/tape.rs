use std::cell::RefCell;
use std::rc::Rc;

use crate::{Float, Tensor};

pub(crate) type ParentGrads<T> = Vec<(usize, Tensor<T>)>;
type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> ParentGrads<T>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Records operations as they execute so gradients can be replayed in reverse.
///
/// A tape lives for one forward/backward pass. Values that do not depend on
/// any gradient-requiring leaf never store a backward closure.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for Var<'_, T> {}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, false, None)
    }

    /// Leaf whose gradient will be available after [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, true, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor<T>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), requires_grad, backward });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn op<F>(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>) -> ParentGrads<T> + 'static,
    {
        let rg = parents.iter().any(|p| p.requires_grad());
        if rg {
            self.push_node(value, true, Some(Box::new(backward)))
        } else {
            self.push_node(value, false, None)
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var<'_, T>) -> Grads<T> {
        assert_eq!(output.value().numel(), 1, "backward needs a scalar output");
        let seed = Tensor::new(output.value().shape(), vec![T::one()]);
        self.backward_with(output, seed)
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, output: Var<'_, T>, seed: Tensor<T>) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.shape(), seed.shape());
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.id).map(|_| None).collect();
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            for (pid, pg) in backward(&g) {
                debug_assert!(pid < id);
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Grads { grads }
    }
}

/// Gradients produced by one reverse pass.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient, or zeros shaped like the variable when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.numel(), 1);
        v.data()[0]
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }
}

//! A small reverse-mode automatic differentiation tape.
//!
//! Every operation appends a node holding its forward value and, when any
//! input requires a gradient, a closure that maps the output gradient to
//! input gradients. Nodes are appended in topological order, so
//! [`Graph::backward`] is a single reverse sweep.
//!
//! The tape is generic over [`Scalar`] so that training runs in `f32` while
//! gradient checks run the very same code in `f64`.

pub mod conv;
pub mod gradcheck;
mod ops;

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use ops::SCORE_EPS;

/// Floating point element type accepted by the tape.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + Sum
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps (output gradient, input values, output value, which inputs need a
/// gradient) to one optional gradient per input.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&ArrayD<T>, &[&ArrayD<T>], &ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

struct Node<T: Scalar> {
    value: ArrayD<T>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Recording tape of tensor operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn variable(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> Var {
        let value = into_standard(value);
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &ArrayD<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Value of a scalar (single element) node.
    pub fn scalar(&self, var: Var) -> T {
        let v = self.value(var);
        assert_eq!(v.len(), 1, "node {} is not a scalar", var.0);
        *v.iter().next().expect("one element")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<T>,
        parents: Vec<Var>,
        backward: BackwardFn<T>,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let value = into_standard(value);
        self.nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar node. The seed gradient is one.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let loss_value = self.value(loss);
        assert_eq!(loss_value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(ArrayD::from_elem(loss_value.raw_dim(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&ArrayD<T>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = backward(&grad_out, &inputs, &node.value, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((parent, grad), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(grad) = grad else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(grad.shape(), self.nodes[parent.0].value.shape());
                match &mut grads[parent.0] {
                    Some(acc) => acc.zip_mut_with(&grad, |a, &g| *a = *a + g),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&ArrayD<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed.
    pub fn take_or_zeros(&mut self, var: Var, like: &[usize]) -> ArrayD<T> {
        self.grads
            .get_mut(var.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| ArrayD::zeros(IxDyn(like)))
    }
}

pub(crate) fn into_standard<T: Scalar>(a: ArrayD<T>) -> ArrayD<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

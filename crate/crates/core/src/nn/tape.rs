//! Reverse-mode autodiff tape over dynamic-dimension `ndarray` tensors.
//!
//! Every forward invocation records onto a fresh [`Tape`]; parameters are
//! read in from a [`ParamStore`](super::ParamStore) as leaf nodes, and
//! [`Tape::backward`] walks the recorded ops in reverse, accumulating
//! gradients for leaves and parameters. Tapes built with [`Tape::no_grad`]
//! skip all bookkeeping and serve as the inference path.

use std::rc::Rc;

use ndarray::ArrayD;

use crate::num::Scalar;

use super::params::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(pub(crate) usize);

pub(crate) type BackwardFn<T> = Box<dyn Fn(&ArrayD<T>) -> Vec<ArrayD<T>>>;

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Rc<ArrayD<T>>,
    pub(crate) parents: Vec<usize>,
    pub(crate) backward: Option<BackwardFn<T>>,
    pub(crate) param: Option<ParamId>,
    pub(crate) needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Tape<T> {
    /// Tape that records gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Inference tape: values only, no gradient bookkeeping.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, t: Tensor) -> &ArrayD<T> {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    pub(crate) fn rc_value(&self, t: Tensor) -> Rc<ArrayD<T>> {
        Rc::clone(&self.nodes[t.0].value)
    }

    /// Untracked constant input.
    pub fn constant(&mut self, value: ArrayD<T>) -> Tensor {
        self.push_node(value, Vec::new(), None, None, false)
    }

    /// Tracked leaf input; receives a gradient in [`Grads`].
    pub fn leaf(&mut self, value: ArrayD<T>) -> Tensor {
        let track = self.grad_enabled;
        self.push_node(value, Vec::new(), None, None, track)
    }

    /// Read a parameter from the store as a tracked leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Tensor {
        let track = self.grad_enabled;
        self.push_node(
            store.value(id).clone(),
            Vec::new(),
            None,
            Some(id),
            track,
        )
    }

    pub(crate) fn push_node(
        &mut self,
        value: ArrayD<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        param: Option<ParamId>,
        force_track: bool,
    ) -> Tensor {
        // Every node value is standard layout; ops rely on it for views,
        // reshapes, and raw-slice kernels.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        let needs_grad = self.grad_enabled
            && (force_track
                || param.is_some()
                || parents.iter().any(|&p| self.nodes[p].needs_grad));
        let node = Node {
            value: Rc::new(value),
            parents: if needs_grad { parents } else { Vec::new() },
            backward: if needs_grad { backward } else { None },
            param,
            needs_grad,
        };
        self.nodes.push(node);
        Tensor(self.nodes.len() - 1)
    }

    /// Record an op: `value` plus a closure producing parent gradients from
    /// the upstream gradient, aligned with `parents`.
    pub(crate) fn push_op(
        &mut self,
        value: ArrayD<T>,
        parents: Vec<usize>,
        backward: BackwardFn<T>,
    ) -> Tensor {
        self.push_node(value, parents, Some(backward), None, false)
    }

    /// Whether recording gradient closures is worthwhile for these inputs.
    pub(crate) fn tracking(&self, parents: &[Tensor]) -> bool {
        self.grad_enabled && parents.iter().any(|t| self.nodes[t.0].needs_grad)
    }

    /// Reverse pass from a scalar root. Gradients are retained for leaves
    /// and parameters; interior gradients are freed as soon as they have
    /// been propagated.
    pub fn backward(&self, root: Tensor) -> Grads<T> {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<ArrayD<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(ArrayD::ones(self.nodes[root.0].value.shape()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let node = &self.nodes[i];
            if let Some(back) = &node.backward {
                let g = grads[i].as_ref().unwrap();
                let parent_grads = back(g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].needs_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                    match &mut grads[p] {
                        Some(existing) => *existing += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
                // Interior gradient no longer needed.
                grads[i] = None;
            }
        }
        Grads { grads }
    }

    /// Collect parameter gradients by [`ParamId`] after [`Self::backward`].
    pub fn param_grads(&self, grads: &Grads<T>, n_params: usize) -> Vec<Option<ArrayD<T>>> {
        let mut out: Vec<Option<ArrayD<T>>> = Vec::with_capacity(n_params);
        out.resize_with(n_params, || None);
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                if let Some(g) = &grads.grads[i] {
                    match &mut out[pid.index()] {
                        Some(existing) => *existing += g,
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        out
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients retained for leaves and parameters.
pub struct Grads<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient with respect to a leaf or parameter node.
    pub fn wrt(&self, t: Tensor) -> Option<&ArrayD<T>> {
        self.grads[t.0].as_ref()
    }
}

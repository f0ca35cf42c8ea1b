//! Reverse-mode differentiation over an operation tape.
//!
//! Every differentiable operation takes a [`Tape`] and returns a [`Var`].
//! When the tape records, the operation appends a node holding a closure
//! that maps the output gradient to input gradients. Parameters own fixed
//! node ids `0..num_params`, so their gradients can be read back by
//! registry position after [`Tape::backward`].
//!
//! A non-recording tape ([`Tape::inference`]) keeps nothing, so
//! intermediate activations are freed as soon as they go out of scope.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A value flowing through the network, optionally tracked by a tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    /// An untracked value.
    pub fn constant(value: Tensor<T>) -> Self {
        Var {
            id: None,
            value: Arc::new(value),
        }
    }

    pub(crate) fn with_id(id: usize, value: Tensor<T>) -> Self {
        Var {
            id: Some(id),
            value: Arc::new(value),
        }
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Mutable access to the stored tensor (copy-on-write if shared).
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

/// Gradient closure: `(grad_out, which inputs need a gradient) -> input grads`.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    // unknown for parameter slots
    shape: Option<Vec<usize>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    num_params: usize,
    recording: bool,
}

impl<T: Scalar> Tape<T> {
    /// A recording tape with leaf slots for `num_params` parameters.
    pub fn new(num_params: usize) -> Self {
        let nodes = (0..num_params)
            .map(|_| Node {
                inputs: Vec::new(),
                backward: None,
                shape: None,
            })
            .collect();
        Tape {
            nodes: RefCell::new(nodes),
            num_params,
            recording: true,
        }
    }

    /// A tape that records nothing.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            num_params: 0,
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A new differentiable leaf (e.g. the network input for ERF maps).
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        if !self.recording {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
            shape: Some(value.shape().to_vec()),
        });
        Var::with_id(nodes.len() - 1, value)
    }

    /// Records an operation output. Inputs without an id are treated as
    /// constants; if no input is tracked the output is a constant too.
    pub fn record(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        if !self.recording || inputs.iter().all(|v| v.id.is_none()) {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        for v in inputs {
            if let Some(id) = v.id {
                assert!(id < nodes.len(), "variable {id} does not belong to this tape");
            }
        }
        nodes.push(Node {
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: Some(Box::new(backward)),
            shape: Some(value.shape().to_vec()),
        });
        Var::with_id(nodes.len() - 1, value)
    }

    /// Back-propagates from a single-element `root`.
    pub fn backward(&self, root: &Var<T>) -> Result<Grads<T>> {
        if root.value.len() != 1 {
            return Err(FmsrError::shape("backward", "scalar root", root.value.len()));
        }
        self.backward_with(root, Tensor::full(root.shape(), T::one()))
    }

    /// Back-propagates an explicit output gradient `seed`.
    pub fn backward_with(&self, root: &Var<T>, seed: Tensor<T>) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        let root_id = root
            .id
            .ok_or_else(|| FmsrError::Argument("backward from an untracked value".into()))?;
        seed.expect_shape("backward", root.shape())?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(seed);
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.is_some()).collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(pid), Some(ig)) = (input, ig) else {
                    continue;
                };
                if let Some(shape) = &nodes[*pid].shape {
                    debug_assert_eq!(ig.shape(), &shape[..]);
                }
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.id.and_then(|id| self.by_id(id))
    }

    pub fn by_id(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take_by_id(&mut self, id: usize) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

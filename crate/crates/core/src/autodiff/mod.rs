//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients additively, so a value
//! used `n` times receives the sum of its `n` contributions.
//!
//! Operations take `&self` so calls can be nested freely:
//!
//! ```
//! use ecg_core::autodiff::Graph;
//! use ecg_core::tensor::Tensor;
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
//! let loss = g.sum(g.mul(x, x).unwrap());
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod conv;
pub mod gradcheck;
mod linalg;
mod norm;
mod ops;
pub mod param;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::{window_len, Conv2dGeometry, PoolGeometry};
pub use gradcheck::{gradcheck, gradcheck_params, GradcheckOptions, GradcheckReport};
pub use norm::BatchStats;
pub use param::{ParamId, ParamKind, ParamStore, Parameter};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&Tensor, &mut GradSink<'_>)>;

struct Node {
    op: &'static str,
    value: Arc<Tensor>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

/// Gives a backward closure write access to the gradient buffers of its inputs.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    nodes: &'a [Node],
    inputs: &'a [usize],
}

impl GradSink<'_> {
    /// Gradient buffer of the `k`-th input, allocated as zeros on first use.
    /// `None` when that input does not require a gradient.
    pub(crate) fn get(&mut self, k: usize) -> Option<&mut Tensor> {
        let id = self.inputs[k];
        let node = &self.nodes[id];
        if !node.requires_grad {
            return None;
        }
        Some(self.grads[id].get_or_insert_with(|| Tensor::zeros(node.value.shape())))
    }

    pub(crate) fn wants(&self, k: usize) -> bool {
        self.nodes[self.inputs[k]].requires_grad
    }
}

/// Reverse-mode tape. Confined to one thread.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, usize>>,
    grad_enabled: bool,
    stochastic: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            grad_enabled: true,
            stochastic: Cell::new(false),
        }
    }

    /// A graph that records values but never backward closures.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Graph::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True once a stochastic op (train-mode dropout) has been recorded.
    pub fn has_stochastic_ops(&self) -> bool {
        self.stochastic.get()
    }

    pub(crate) fn mark_stochastic(&self) {
        self.stochastic.set(true);
    }

    /// Records an input value.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            op: "leaf",
            value: Arc::new(value),
            inputs: Vec::new(),
            requires_grad: requires_grad && self.grad_enabled,
            backward: None,
            param: None,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a leaf. Binding the same parameter twice
    /// returns the same handle.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var(node);
        }
        let p = store.get(id);
        let var = self.push(Node {
            op: "param",
            value: Arc::clone(p.value_arc()),
            inputs: Vec::new(),
            requires_grad: self.grad_enabled && p.trainable(),
            backward: None,
            param: Some(id),
        });
        self.bound.borrow_mut().insert(id, var.0);
        var
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Appends an operation. The backward closure receives the gradient of
    /// the output and adds contributions into its inputs' buffers.
    pub(crate) fn record<F>(&self, op: &'static str, inputs: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&Tensor, &mut GradSink<'_>) + 'static,
    {
        let requires_grad = self.grad_enabled && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push(Node {
            op,
            value: Arc::new(value),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            param: None,
        })
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Returns gradients for every leaf that requires one. Leaves the loss
    /// does not depend on get no entry; [`ParamStore::accumulate`] treats
    /// that as a zero contribution.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Precondition(format!(
                "backward needs a scalar loss, got shape {:?}; reduce it first (e.g. sum or mean)",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if !root.requires_grad {
            return Ok(Gradients::default());
        }
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.backward {
                Some(bw) => {
                    let (head, _) = grads.split_at_mut(i);
                    let mut sink = GradSink {
                        grads: head,
                        nodes: &nodes,
                        inputs: &node.inputs,
                    };
                    bw(&g, &mut sink);
                }
                None => {
                    if let Some(pid) = node.param {
                        out.params.push((pid, g.clone()));
                    }
                    out.leaves.insert(i, g);
                }
            }
        }
        Ok(out)
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }
}

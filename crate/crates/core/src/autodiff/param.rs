//! Named parameter storage.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Learnable weights versus state carried along with them (batchnorm running stats).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    trainable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> &Arc<Tensor> {
        &self.value
    }

    /// Mutable access to the value. Clones only if a graph still holds it.
    pub fn value_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    /// Buffers are never trainable.
    pub fn trainable(&self) -> bool {
        self.trainable && self.kind == ParamKind::Weight
    }
}

/// Ordered set of uniquely named parameters and buffers.
///
/// Insertion order is the canonical order used by summaries and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.insert(name.into(), value, ParamKind::Weight)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.insert(name.into(), value, ParamKind::Buffer)
    }

    fn insert(&mut self, name: String, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            kind,
            value: Arc::new(value),
            grad: None,
            trainable: true,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ParameterShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Marks every weight trainable iff `pred(name)` holds.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable()
    }

    /// Sets every trainable weight's gradient to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = if p.trainable() {
                Some(Tensor::zeros(p.value.shape()))
            } else {
                None
            };
        }
    }

    /// Adds the parameter gradients from one backward pass. Gradients
    /// accumulate until [`zero_grad`](Self::zero_grad) is called.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for p in &mut self.params {
            if p.trainable() && p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
        for (id, g) in grads.params() {
            if let Some(buf) = self.params[id.0].grad.as_mut() {
                buf.add_assign(g);
            }
        }
    }

    pub fn weights(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.iter().filter(|(_, p)| p.kind == ParamKind::Weight)
    }

    /// Number of scalar weights (buffers excluded).
    pub fn num_weights(&self) -> usize {
        self.weights().map(|(_, p)| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("a.weight", Tensor::zeros(&[2])).is_err());
        assert!(s.add_buffer("a.weight", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn unreachable_params_get_zero_grad_and_repeat_backward_accumulates() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::from_vec(vec![3.0])).unwrap();
        let b = s.add("b", Tensor::from_vec(vec![5.0])).unwrap();
        s.zero_grad();
        for _ in 0..2 {
            let g = Graph::new();
            let va = g.param(&s, a);
            let loss = g.sum(g.mul(va, va).unwrap());
            let grads = g.backward(loss).unwrap();
            s.accumulate(&grads);
        }
        assert_eq!(s.get(a).grad().unwrap().item(), 12.0);
        assert_eq!(s.get(b).grad().unwrap().item(), 0.0);
    }

    #[test]
    fn frozen_params_are_not_differentiated() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::from_vec(vec![3.0])).unwrap();
        s.set_trainable(a, false);
        let g = Graph::new();
        let va = g.param(&s, a);
        assert!(!g.requires_grad(va));
    }
}

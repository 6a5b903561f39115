use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation F1 improvement before stopping; `None` never stops early.
    pub patience: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 5e-4,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 50,
            patience: Some(10),
        }
    }
}

impl OptimizerConfig {
    /// Learning rates that work well per family.
    pub fn reference_lr(arch: Architecture) -> f64 {
        match arch {
            Architecture::AlexNet1D | Architecture::VGG11bn1D | Architecture::ResNet18_1D => 2e-4,
            Architecture::AttResNet | Architecture::ResTransformer => 2e-4,
            Architecture::CRNN_LSTM | Architecture::CRNN_GRU => 5e-4,
            Architecture::TransformerEnc => 1e-4,
            Architecture::EEGNet2D => 1.5e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::invalid(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("eps must be positive and weight decay non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    betas: [f64; 2],
    eps: f64,
    weight_decay: f64,
    t: u64,
    state: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            lr: cfg.lr,
            betas: cfg.betas,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            state: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable weight holding a gradient. A non-finite
    /// gradient aborts before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store
            .iter()
            .filter(|(_, p)| p.kind() == ParamKind::Weight && p.trainable() && p.grad().is_some())
            .map(|(id, _)| id)
            .collect();
        for &id in &ids {
            let p = store.get(id);
            if let Some(i) = p.grad().unwrap().data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}` at element {i}", p.name())));
            }
        }
        self.t += 1;
        let [b1, b2] = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for id in ids {
            let p = store.get_mut(id);
            let grad = p.grad().unwrap().clone();
            let shape = grad.shape().to_vec();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            });
            let w = p.value_mut().data_mut();
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (i, &g0) in grad.data().iter().enumerate() {
                let g = g0 + self.weight_decay * w[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

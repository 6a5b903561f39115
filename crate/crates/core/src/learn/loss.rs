use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::labels::LabelVector;
use crate::tensor::Tensor;

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalLossParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams { gamma: 2.0, alpha: 0.7 }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("focal alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Focal loss of one logit and its target, with `d loss / d logit`.
pub fn focal_term(z: f64, y: f64, p: FocalLossParams) -> (f64, f64) {
    let (u, sign, a) = if y > 0.5 { (z, 1.0, p.alpha) } else { (-z, -1.0, 1.0 - p.alpha) };
    let log_q = -softplus(u);
    let modulator = (p.gamma * log_q).exp();
    let ce = softplus(-u);
    let du = -a * modulator * (p.gamma * sigmoid(u) * ce + sigmoid(-u));
    (a * modulator * ce, du * sign)
}

/// Weighted binary cross-entropy of one logit, with its derivative.
pub fn bce_term(z: f64, y: f64, pos_weight: f64) -> (f64, f64) {
    if y > 0.5 {
        (pos_weight * softplus(-z), -pos_weight * sigmoid(-z))
    } else {
        (softplus(z), sigmoid(z))
    }
}

fn check_targets(op: &'static str, logits: &[usize], targets: &Tensor) -> Result<()> {
    if logits != targets.shape() {
        return Err(Error::shape(op, format!("logits {logits:?} vs targets {:?}", targets.shape())));
    }
    if let Some(v) = targets.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{op}: targets must be 0 or 1, found {v}")));
    }
    Ok(())
}

/// Mean of an elementwise loss term over all entries of `logits`.
fn elementwise_mean(g: &Graph, op: &'static str, logits: Var, targets: &Tensor, term: impl Fn(usize, f64, f64) -> (f64, f64)) -> Result<Var> {
    let lv = g.value(logits);
    check_targets(op, lv.shape(), targets)?;
    let k = *lv.shape().last().unwrap_or(&1);
    let n = lv.len() as f64;
    let (loss, grads): (Vec<f64>, Vec<f64>) = lv
        .data()
        .iter()
        .zip(targets.data())
        .enumerate()
        .map(|(i, (&z, &y))| term(i % k.max(1), z, y))
        .unzip();
    let total = loss.iter().sum::<f64>() / n;
    Ok(g.record(op, &[logits], Tensor::scalar(total), move |up, sink| {
        if let Some(gl) = sink.get(0) {
            let s = up.item() / n;
            for (acc, d) in gl.data_mut().iter_mut().zip(&grads) {
                *acc += s * d;
            }
        }
    }))
}

/// Mean focal loss over all entries, computed from logits in log space.
pub fn focal_loss(g: &Graph, logits: Var, targets: &Tensor, params: FocalLossParams) -> Result<Var> {
    params.validate()?;
    elementwise_mean(g, "focal_loss", logits, targets, |_, z, y| focal_term(z, y, params))
}

/// Mean binary cross-entropy with per-class weights on the positive terms.
pub fn weighted_bce(g: &Graph, logits: Var, targets: &Tensor, weights: &[f64]) -> Result<Var> {
    let k = *g.value(logits).shape().last().unwrap_or(&0);
    if weights.len() != k {
        return Err(Error::invalid(format!("{} class weights for {k} outputs", weights.len())));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!("class weights must be positive, found {w}")));
    }
    let weights = weights.to_vec();
    elementwise_mean(g, "weighted_bce", logits, targets, move |c, z, y| bce_term(z, y, weights[c]))
}

/// `n_total / n_positive` per class, rescaled to mean 1.
pub fn class_weights(labels: &[LabelVector], class_names: &[String]) -> Result<Vec<f64>> {
    let k = class_names.len();
    let mut pos = vec![0usize; k];
    for l in labels {
        for (c, &v) in l.values().iter().enumerate().take(k) {
            pos[c] += v as usize;
        }
    }
    if let Some(c) = pos.iter().position(|&p| p == 0) {
        return Err(Error::Precondition(format!(
            "class `{}` has no positive examples; automatic class weights are undefined",
            class_names[c]
        )));
    }
    let raw: Vec<f64> = pos.iter().map(|&p| labels.len() as f64 / p as f64).collect();
    let mean = raw.iter().sum::<f64>() / k as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Loss selection as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// `weights: None` derives them from the training labels.
    WeightedBce {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Bce,
}

fn default_gamma() -> f64 {
    FocalLossParams::default().gamma
}

fn default_alpha() -> f64 {
    FocalLossParams::default().alpha
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Focal {
            gamma: default_gamma(),
            alpha: default_alpha(),
        }
    }
}

/// A loss ready to apply, with class weights resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    Focal(FocalLossParams),
    WeightedBce(Vec<f64>),
}

impl Loss {
    pub fn resolve(cfg: &LossConfig, train_labels: &[LabelVector], class_names: &[String]) -> Result<Self> {
        Ok(match cfg {
            LossConfig::Focal { gamma, alpha } => {
                let p = FocalLossParams { gamma: *gamma, alpha: *alpha };
                p.validate()?;
                Loss::Focal(p)
            }
            LossConfig::WeightedBce { weights: Some(w) } => Loss::WeightedBce(w.clone()),
            LossConfig::WeightedBce { weights: None } => Loss::WeightedBce(class_weights(train_labels, class_names)?),
            LossConfig::Bce => Loss::WeightedBce(vec![1.0; class_names.len()]),
        })
    }

    pub fn apply(&self, g: &Graph, logits: Var, targets: &Tensor) -> Result<Var> {
        match self {
            Loss::Focal(p) => focal_loss(g, logits, targets, *p),
            Loss::WeightedBce(w) => weighted_bce(g, logits, targets, w),
        }
    }
}

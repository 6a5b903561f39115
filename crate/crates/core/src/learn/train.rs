use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::autodiff::{Graph, ParamStore};
use crate::dataio::{batch_iterator, Mode, PreprocessConfig};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng;
use crate::signal::EcgRecord;
use crate::tensor::Tensor;

use super::loss::Loss;
use super::metrics::{compute_metrics, scores_from_logits, MetricsReport};
use super::optim::{Adam, OptimizerConfig};

/// Prepared records and the positions forming each split.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub records: &'a [EcgRecord],
    pub train: &'a [usize],
    pub val: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub pre: PreprocessConfig,
    pub augment: AugmentConfig,
    pub optim: OptimizerConfig,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
    /// Validation F1 beat every earlier epoch.
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "epoch,train_loss,val_accuracy,val_f1,val_map,val_auc,val_gmean,improved").unwrap();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let v = e.val.as_ref();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt(v.map(|m| m.accuracy)),
                opt(v.map(|m| m.f1)),
                opt(v.and_then(|m| m.map)),
                opt(v.and_then(|m| m.auc)),
                opt(v.map(|m| m.gmean)),
                e.improved
            )
            .unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

fn check_targets_match(records: &[EcgRecord], indices: &[usize], k: usize) -> Result<()> {
    if let Some(&i) = indices.iter().find(|&&i| records.get(i).is_some_and(|r| r.labels.values().len() != k)) {
        return Err(Error::Precondition(format!(
            "record `{}` has {} labels but the model has {k} outputs",
            records[i].id,
            records[i].labels.values().len()
        )));
    }
    Ok(())
}

/// Eval-mode scores and targets for `indices`, in input order.
pub fn predict_scores(model: &mut Model, records: &[EcgRecord], indices: &[usize], pre: &PreprocessConfig, batch_size: usize) -> Result<(Tensor, Tensor)> {
    let k = model.outputs();
    check_targets_match(records, indices, k)?;
    let none = AugmentConfig::disabled();
    let mut scores = Vec::with_capacity(indices.len() * k);
    let mut targets = Vec::with_capacity(indices.len() * k);
    for batch in batch_iterator(records, indices, batch_size, pre, &none, Mode::Eval)? {
        let batch = batch?;
        let logits = model.predict(&batch.x)?;
        scores.extend_from_slice(scores_from_logits(&logits, model.spec().head.task).data());
        targets.extend_from_slice(batch.y.data());
    }
    let n = indices.len();
    Ok((Tensor::new(vec![n, k], scores)?, Tensor::new(vec![n, k], targets)?))
}

/// Metrics of the model on `indices` at the given decision threshold.
pub fn evaluate(
    model: &mut Model,
    records: &[EcgRecord],
    indices: &[usize],
    pre: &PreprocessConfig,
    batch_size: usize,
    threshold: f64,
    class_names: &[String],
) -> Result<MetricsReport> {
    let (s, t) = predict_scores(model, records, indices, pre, batch_size)?;
    compute_metrics(&s, &t, model.spec().head.task, threshold, class_names)
}

/// Runs the epoch loop. After each epoch `hook` may stop training.
/// With a validation split the best-F1 parameters are restored at the end.
pub fn train_with<H>(
    model: &mut Model,
    data: TrainData<'_>,
    loss: &Loss,
    settings: &TrainSettings,
    class_names: &[String],
    mut hook: H,
) -> Result<History>
where
    H: FnMut(&EpochRecord, &mut Model) -> Result<Control>,
{
    let cfg = &settings.optim;
    cfg.validate()?;
    settings.pre.validate()?;
    check_targets_match(data.records, data.train, model.outputs())?;
    let mut adam = Adam::new(cfg)?;
    let mut history = History::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        let mode = Mode::Train {
            seed: settings.seed,
            epoch: epoch as u64,
        };
        let mut total = 0.0;
        let mut seen = 0usize;
        let batches = batch_iterator(data.records, data.train, cfg.batch_size, &settings.pre, &settings.augment, mode)?;
        for (bi, batch) in batches.enumerate() {
            let batch = batch?;
            let g = Graph::new();
            let x = g.constant(batch.x);
            let mut drop_rng = rng::substream(settings.seed, "dropout", rng::stream_id(epoch as u64, bi as u64));
            let logits = model.forward(&g, x, true, &mut drop_rng)?;
            let l = loss.apply(&g, logits, &batch.y)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("loss is {value} at epoch {epoch}, batch {}", bi + 1)));
            }
            let grads = g.backward(l)?;
            drop(g);
            model.store.zero_grad();
            model.store.accumulate(&grads);
            adam.step(&mut model.store)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", bi + 1)))?;
            total += value * batch.indices.len() as f64;
            seen += batch.indices.len();
        }
        let val = if data.val.is_empty() {
            None
        } else {
            Some(evaluate(model, data.records, data.val, &settings.pre, cfg.batch_size, settings.threshold, class_names)?)
        };
        let improved = match (&val, &best) {
            (Some(v), Some((f1, _, _))) => v.f1 > *f1,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((val.as_ref().unwrap().f1, epoch, model.store.clone()));
            stale = 0;
        } else if val.is_some() {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            val,
            improved,
        };
        log::info!("epoch {epoch}: train loss {:.5}", record.train_loss);
        let control = hook(&record, model)?;
        history.epochs.push(record);
        if control == Control::Stop {
            break;
        }
        if cfg.patience.is_some_and(|p| stale >= p) {
            history.stopped_early = true;
            break;
        }
    }
    match best {
        Some((_, epoch, store)) => {
            model.store = store;
            history.best_epoch = Some(epoch);
        }
        None => history.best_epoch = history.epochs.last().map(|e| e.epoch),
    }
    Ok(history)
}

pub fn train(model: &mut Model, data: TrainData<'_>, loss: &Loss, settings: &TrainSettings, class_names: &[String]) -> Result<History> {
    train_with(model, data, loss, settings, class_names, |_, _| Ok(Control::Continue))
}

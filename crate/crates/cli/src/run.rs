use std::fs;
use std::path::{Path, PathBuf};

use ecg_core::dataio::{prepare_records, stratified_kfold, DatasetManifest, LabelSchema, SplitPlan};
use ecg_core::learn::{evaluate, train_with, Control, History, Loss, MetricsReport, TrainData, TrainSettings};
use ecg_core::models::{build, Model};
use ecg_core::signal::EcgRecord;
use ecg_core::transfer::{adapt_head, finetune_with, load_checkpoint, save_checkpoint, Checkpoint, FineTuneMode, Provenance};
use serde::{Deserialize, Serialize};

use crate::config::{load_config, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{ConfigArgs, SplitArg};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Prepared records and their split.
pub struct Dataset {
    pub schema: LabelSchema,
    pub records: Vec<EcgRecord>,
    pub plan: SplitPlan,
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let manifest = DatasetManifest::read_csv(&cfg.data.manifest)?;
    let schema = match &cfg.data.classes {
        Some(c) => LabelSchema::new(cfg.data.task, c.clone())?,
        None => LabelSchema::infer(cfg.data.task, &manifest.entries)?,
    };
    let raw = manifest.load_records(&schema, cfg.data.csv_fs)?;
    let folds: Vec<Option<u32>> = if manifest.entries.iter().all(|e| e.fold.is_some()) {
        manifest.entries.iter().map(|e| e.fold).collect()
    } else {
        let labels: Vec<_> = raw.iter().map(|r| r.labels.clone()).collect();
        stratified_kfold(&labels, &schema.classes, cfg.split.folds, cfg.seed)?.into_iter().map(Some).collect()
    };
    let plan = SplitPlan::from_folds(&folds, cfg.split.val_fold, cfg.split.test_fold)?;
    if plan.train.is_empty() {
        return Err(CliError::config("the training split is empty"));
    }
    let records = prepare_records(&raw, &cfg.preprocess)?;
    Ok(Dataset { schema, records, plan })
}

/// What a finished run leaves next to its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub architecture: String,
    /// Pretraining source of the initial weights, `none` when trained from scratch.
    pub pretrain: String,
    pub finetune_mode: Option<FineTuneMode>,
    /// Split that `metrics.json` was computed on.
    pub split: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub val_f1: Option<f64>,
    pub fingerprint: String,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

pub fn cmd_train(args: &ConfigArgs) -> CliResult<RunOutcome> {
    let cfg = load_config(&args.config, &args.overrides())?;
    let dir = cfg.run_dir(args.out.as_deref());
    train_config(&cfg, &dir)
}

pub fn train_config(cfg: &RunConfig, dir: &Path) -> CliResult<RunOutcome> {
    let data = load_dataset(cfg)?;
    let model = build(&cfg.model_spec(), cfg.seed)?;
    execute(cfg, dir, data, model, None, "none".into())
}

pub fn cmd_finetune(args: &ConfigArgs, from: &Path, mode: FineTuneMode) -> CliResult<RunOutcome> {
    let cfg = load_config(&args.config, &args.overrides())?;
    let ckpt = load_checkpoint(from)?;
    check_compatible(&cfg, &ckpt, from)?;
    let data = load_dataset(&cfg)?;
    let model = adapt_head(&ckpt, cfg.data.task, cfg.seed)?;
    let dir = cfg.run_dir(args.out.as_deref());
    execute(&cfg, &dir, data, model, Some(mode), ckpt.provenance.source.clone())
}

/// Architecture and hyperparameters must match; the head is rebuilt for the configured task.
fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    let spec = &ckpt.spec;
    if spec.architecture != cfg.model.architecture {
        return Err(CliError::config(format!(
            "{} holds a {} model but the config asks for {}",
            path.display(),
            spec.architecture,
            cfg.model.architecture
        )));
    }
    if spec.hyper != cfg.model.hyper {
        return Err(CliError::config(format!(
            "{}: model.hyper differs from the checkpoint's hyperparameters",
            path.display()
        )));
    }
    Ok(())
}

fn execute(cfg: &RunConfig, dir: &Path, data: Dataset, mut model: Model, mode: Option<FineTuneMode>, pretrain: String) -> CliResult<RunOutcome> {
    let provenance = Provenance {
        source: cfg.data.source.clone(),
        epochs: 0,
        val_metrics: None,
    };
    provenance.validate().map_err(|e| CliError::config(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let snapshot = dir.join(CONFIG_FILE);
    fs::write(&snapshot, cfg.to_toml()?).map_err(|e| CliError::io(&snapshot, e))?;

    let names = &data.schema.classes;
    let train_labels: Vec<_> = data.plan.train.iter().map(|&i| data.records[i].labels.clone()).collect();
    let loss = Loss::resolve(&cfg.loss, &train_labels, names)?;
    let settings = TrainSettings {
        pre: cfg.preprocess,
        augment: cfg.augment,
        optim: cfg.optim.clone(),
        threshold: cfg.threshold,
        seed: cfg.seed,
    };
    let td = TrainData {
        records: &data.records,
        train: &data.plan.train,
        val: &data.plan.val,
    };
    let hook = |r: &ecg_core::learn::EpochRecord, _: &mut Model| {
        match &r.val {
            Some(v) => log::info!("epoch {}: loss {:.5}, val F1 {:.4}", r.epoch, r.train_loss, v.f1),
            None => log::info!("epoch {}: loss {:.5}", r.epoch, r.train_loss),
        }
        Ok(Control::Continue)
    };
    let history = match mode {
        Some(m) => finetune_with(&mut model, m, td, &loss, &settings, names, hook)?,
        None => train_with(&mut model, td, &loss, &settings, names, hook)?,
    };
    history.write_csv(&dir.join("history.csv"))?;
    history.write_json(&dir.join("history.json"))?;

    let best_val = best_val(&history);
    let provenance = Provenance {
        epochs: history.epochs.len(),
        val_metrics: best_val.clone(),
        ..provenance
    };
    save_checkpoint(&model, &provenance, &dir.join(CHECKPOINT_FILE))?;

    let (split, indices) = if !data.plan.test.is_empty() {
        ("test", &data.plan.test)
    } else if !data.plan.val.is_empty() {
        ("val", &data.plan.val)
    } else {
        ("train", &data.plan.train)
    };
    let report = evaluate(&mut model, &data.records, indices, &cfg.preprocess, cfg.optim.batch_size, cfg.threshold, names)?;
    write_json(&dir.join(METRICS_FILE), &report)?;
    let summary = RunSummary {
        name: cfg.name.clone(),
        architecture: cfg.model.architecture.key().to_string(),
        pretrain,
        finetune_mode: mode,
        split: split.to_string(),
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
        val_f1: best_val.map(|m| m.f1),
        fingerprint: model.fingerprint(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    println!("run: {}", dir.display());
    for (k, v) in report.headline() {
        println!("{split} {k}: {v:.4}");
    }
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
    })
}

fn best_val(h: &History) -> Option<MetricsReport> {
    let best = h.best_epoch?;
    h.epochs.iter().find(|e| e.epoch == best).and_then(|e| e.val.clone())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn cmd_evaluate(args: &ConfigArgs, checkpoint: &Path, split: SplitArg) -> CliResult<()> {
    let cfg = load_config(&args.config, &args.overrides())?;
    let ckpt = load_checkpoint(checkpoint)?;
    check_compatible(&cfg, &ckpt, checkpoint)?;
    if ckpt.spec.head.task != cfg.data.task {
        return Err(CliError::config(format!(
            "{} predicts {:?} but the config task is {:?}",
            checkpoint.display(),
            ckpt.spec.head.task,
            cfg.data.task
        )));
    }
    let data = load_dataset(&cfg)?;
    let indices = match split {
        SplitArg::Train => &data.plan.train,
        SplitArg::Val => &data.plan.val,
        SplitArg::Test => &data.plan.test,
    };
    let mut model = ckpt.to_model()?;
    let report = evaluate(&mut model, &data.records, indices, &cfg.preprocess, cfg.optim.batch_size, cfg.threshold, &data.schema.classes)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?;
    match &args.out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::io(p, e))?,
        None => println!("{text}"),
    }
    Ok(())
}

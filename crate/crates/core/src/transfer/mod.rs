//! Checkpoints, head replacement and fine-tuning.

mod checkpoint;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::labels::Task;
use crate::learn::{train_with, Control, EpochRecord, History, Loss, TrainData, TrainSettings};
use crate::models::{build, Model, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    #[default]
    AllWeights,
    HeadOnly,
}

/// Rebuilds the checkpoint's model with a fresh head for `task`; every
/// non-head tensor is copied bitwise.
pub fn adapt_head(ckpt: &Checkpoint, task: Task, seed: u64) -> Result<Model> {
    if !ckpt.parameters.iter().any(|(n, _)| Model::is_head_param(n)) {
        return Err(Error::Precondition(format!(
            "{} checkpoint has no `head.` parameters to replace",
            ckpt.spec.architecture
        )));
    }
    let spec = ModelSpec {
        head: crate::models::HeadSpec { task },
        ..ckpt.spec.clone()
    };
    let mut model = build(&spec, seed)?;
    for (name, t) in ckpt.parameters.iter().filter(|(n, _)| !Model::is_head_param(n)) {
        let id = model.store.id(name).ok_or_else(|| Error::UnexpectedParameter(name.clone()))?;
        model.store.set_value(id, t.clone())?;
    }
    Ok(model)
}

/// Marks which parameters the optimizer may update.
pub fn apply_mode(model: &mut Model, mode: FineTuneMode) {
    match mode {
        FineTuneMode::AllWeights => model.store.set_trainable_where(|_| true),
        FineTuneMode::HeadOnly => model.store.set_trainable_where(Model::is_head_param),
    }
}

/// Training with the given freezing mode; otherwise identical to [`crate::learn::train`].
pub fn finetune(
    model: &mut Model,
    mode: FineTuneMode,
    data: TrainData<'_>,
    loss: &Loss,
    settings: &TrainSettings,
    class_names: &[String],
) -> Result<History> {
    finetune_with(model, mode, data, loss, settings, class_names, |_, _| Ok(Control::Continue))
}

pub fn finetune_with<H>(
    model: &mut Model,
    mode: FineTuneMode,
    data: TrainData<'_>,
    loss: &Loss,
    settings: &TrainSettings,
    class_names: &[String],
    hook: H,
) -> Result<History>
where
    H: FnMut(&EpochRecord, &mut Model) -> Result<Control>,
{
    apply_mode(model, mode);
    let out = train_with(model, data, loss, settings, class_names, hook);
    apply_mode(model, FineTuneMode::AllWeights);
    out
}

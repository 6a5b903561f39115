use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use ecg_core::augment::AugmentConfig;
use ecg_core::dataio::PreprocessConfig;
use ecg_core::labels::Task;
use ecg_core::learn::{LossConfig, OptimizerConfig};
use ecg_core::models::{Architecture, HeadSpec, HyperParams, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "ECG_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest CSV; relative paths are resolved against the config file.
    pub manifest: PathBuf,
    pub task: Task,
    /// Class order; inferred (sorted) from the manifest when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// Sampling rate of CSV signal files.
    #[serde(default = "default_fs")]
    pub csv_fs: f64,
    /// Provenance tag written into checkpoints.
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_fs() -> f64 {
    500.0
}

fn default_source() -> String {
    "none".into()
}

/// Fold-based split. Manifests without a fold column get stratified folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub val_fold: u32,
    pub test_fold: u32,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            val_fold: 9,
            test_fold: 10,
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub hyper: HyperParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimizerConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

fn default_name() -> String {
    "run".into()
}

fn default_threshold() -> f64 {
    0.5
}

impl RunConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            architecture: self.model.architecture,
            head: HeadSpec { task: self.data.task },
            hyper: self.model.hyper.clone(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let v = |r: ecg_core::Result<()>| r.map_err(|e| CliError::config(e.to_string()));
        v(self.model_spec().validate())?;
        v(self.preprocess.validate())?;
        v(self.augment.validate())?;
        v(self.optim.validate())?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.split.val_fold == self.split.test_fold {
            return Err(CliError::config("split.val_fold and split.test_fold must differ"));
        }
        if self.split.folds < 3 {
            return Err(CliError::config("split.folds must be at least 3"));
        }
        Ok(())
    }

    /// Directory for this run: `--out`, then `output_dir`, then `$ECG_OUTPUT_ROOT/<name>`, then `runs/<name>`.
    pub fn run_dir(&self, out: Option<&Path>) -> PathBuf {
        if let Some(o) = out {
            return o.to_path_buf();
        }
        if let Some(o) = &self.output_dir {
            return o.clone();
        }
        output_root().join(&self.name)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::runtime(format!("cannot serialize config: {e}")))
    }
}

pub fn output_root() -> PathBuf {
    env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Sets `dotted.key = value` in a TOML tree. The value is parsed as TOML,
/// falling back to a plain string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    set_path(root, key, value)
}

pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a config file, applies overrides and resolves the manifest path.
pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg = from_table(table, path)?;
    if cfg.data.manifest.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.manifest = absolute(&base.join(&cfg.data.manifest));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn from_table(table: toml::Table, origin: &Path) -> CliResult<RunConfig> {
    RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::config(format!("{}: {e}", origin.display())))
}

pub fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

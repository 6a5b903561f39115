//! `ecg`: dataset preparation, training, fine-tuning, sweeps, evaluation and reports.

mod config;
mod error;
mod prepare;
mod report;
mod run;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ecg_core::transfer::FineTuneMode;

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "ecg", version, about = "12-lead ECG classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that read a run config.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set optim.lr=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set optim.lr=<v>`.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Shorthand for `--set optim.epochs=<v>`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Shorthand for `--set seed=<v>`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `output_dir`, then `$ECG_OUTPUT_ROOT/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    /// `--set` values followed by the shorthand flags.
    pub fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(v) = self.lr {
            o.push(format!("optim.lr={v:?}"));
        }
        if let Some(v) = self.epochs {
            o.push(format!("optim.epochs={v}"));
        }
        if let Some(v) = self.seed {
            o.push(format!("seed={v}"));
        }
        o
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Binary,
    Multiclass,
    Multilabel,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    All,
    Head,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or validate a dataset manifest and assign folds.
    Prepare(prepare::PrepareArgs),
    /// Train a model from a run config.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Fine-tune a pretrained checkpoint on the configured dataset.
    Finetune {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        from_checkpoint: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Train one model per point of a parameter grid.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        /// TOML file mapping dotted config keys to arrays of values.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Score a checkpoint on one split of the configured dataset.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Collect finished runs into metric tables and radial-chart data.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print checkpoint hashes, optionally diffing against another checkpoint.
    VerifyCheckpoint {
        checkpoint: PathBuf,
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(a) => prepare::cmd_prepare(&a),
        Command::Train { args } => run::cmd_train(&args).map(|_| ()),
        Command::Finetune {
            args,
            from_checkpoint,
            mode,
        } => {
            let mode = match mode {
                ModeArg::All => FineTuneMode::AllWeights,
                ModeArg::Head => FineTuneMode::HeadOnly,
            };
            run::cmd_finetune(&args, &from_checkpoint, mode).map(|_| ())
        }
        Command::Sweep { args, grid } => sweep::cmd_sweep(&args, &grid),
        Command::Evaluate { args, checkpoint, split } => run::cmd_evaluate(&args, &checkpoint, split),
        Command::Report { runs, out } => report::cmd_report(&runs, &out),
        Command::VerifyCheckpoint { checkpoint, against } => verify::cmd_verify(&checkpoint, against.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ecg_core::dataio::{
    class_counts, generate_synthetic_dataset, prepare_records, stratified_kfold, write_csv_signal, write_dataset,
    DatasetManifest, LabelSchema, ManifestEntry, PreprocessConfig, SplitPlan, SyntheticSpec,
};
use ecg_core::labels::{LabelVector, Task};

use crate::config::absolute;
use crate::error::{CliError, CliResult};
use crate::TaskKind;

#[derive(clap::Args, Debug)]
pub struct PrepareArgs {
    /// Generate a synthetic dataset instead of reading a manifest.
    #[arg(long, conflicts_with = "manifest")]
    synthetic: bool,
    /// Existing manifest CSV with `id`, `path`, `labels` and optional `fold` columns.
    #[arg(long, required_unless_present = "synthetic")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "multiclass")]
    task: TaskKind,
    /// Class count for synthetic data.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Synthetic records per class (per stratum for binary tasks).
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    /// Synthetic record length in samples.
    #[arg(long, default_value_t = 5000)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fold count for records without a fold id.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Sampling rate of CSV signal files.
    #[arg(long, default_value_t = 500.0)]
    csv_fs: f64,
    /// Also write bandpass-filtered signals under `<out>/cache`.
    #[arg(long)]
    cache: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn task_of(kind: TaskKind, classes: usize) -> Task {
    match kind {
        TaskKind::Binary => Task::Binary,
        TaskKind::Multiclass => Task::MultiClass { classes },
        TaskKind::Multilabel => Task::MultiLabel { classes },
    }
}

pub fn cmd_prepare(a: &PrepareArgs) -> CliResult<()> {
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let (manifest, schema, labels) = if a.synthetic {
        synthetic(a)?
    } else {
        from_manifest(a, a.manifest.as_deref().expect("clap enforces --manifest"))?
    };
    print_summary(&schema, &labels, &manifest)?;
    if a.cache {
        write_cache(a, &manifest, &schema)?;
    }
    println!("manifest: {}", a.out.join("manifest.csv").display());
    Ok(())
}

fn synthetic(a: &PrepareArgs) -> CliResult<(DatasetManifest, LabelSchema, Vec<LabelVector>)> {
    let task = task_of(a.task, a.classes);
    let mut spec = SyntheticSpec::balanced(task, a.per_class, a.seed);
    spec.length = a.length;
    let (schema, records) = generate_synthetic_dataset(&spec)?;
    let labels: Vec<LabelVector> = records.iter().map(|r| r.labels.clone()).collect();
    let folds = stratified_kfold(&labels, &schema.classes, a.folds, a.seed)?;
    let manifest = write_dataset(&a.out, &schema, &records, Some(&folds))?;
    Ok((manifest, schema, labels))
}

fn from_manifest(a: &PrepareArgs, path: &Path) -> CliResult<(DatasetManifest, LabelSchema, Vec<LabelVector>)> {
    let input = DatasetManifest::read_csv(path)?;
    let target = a.out.join("manifest.csv");
    if absolute(&target) == absolute(path) {
        return Err(CliError::config("--out would overwrite the input manifest; choose another directory"));
    }
    let names = input.entries.iter().flat_map(|e| &e.labels).collect::<BTreeSet<_>>().len();
    let task = match a.task {
        TaskKind::Binary => Task::Binary,
        k => task_of(k, names),
    };
    let schema = LabelSchema::infer(task, &input.entries)?;
    let labels = input
        .entries
        .iter()
        .map(|e| schema.encode(&e.labels).map_err(|err| CliError::config(format!("record {}: {err}", e.id))))
        .collect::<CliResult<Vec<_>>>()?;
    // loading every record surfaces malformed files, listed by id
    input.load_records(&schema, a.csv_fs)?;
    let folds: Vec<Option<u32>> = if input.entries.iter().all(|e| e.fold.is_some()) {
        input.entries.iter().map(|e| e.fold).collect()
    } else {
        stratified_kfold(&labels, &schema.classes, a.folds, a.seed)?.into_iter().map(Some).collect()
    };
    let entries = input
        .entries
        .iter()
        .zip(&folds)
        .map(|(e, &fold)| ManifestEntry {
            path: absolute(&input.resolve(e)),
            fold,
            ..e.clone()
        })
        .collect();
    let manifest = DatasetManifest::new(&a.out, entries)?;
    manifest.write_csv(&target)?;
    Ok((manifest, schema, labels))
}

fn print_summary(schema: &LabelSchema, labels: &[LabelVector], manifest: &DatasetManifest) -> CliResult<()> {
    println!("records: {}", labels.len());
    for (name, n) in schema.classes.iter().zip(class_counts(labels)) {
        println!("class {name}: {n}");
    }
    let folds: Vec<Option<u32>> = manifest.entries.iter().map(|e| e.fold).collect();
    let mut ids: Vec<u32> = folds.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() >= 3 {
        let (val, test) = (ids[ids.len() - 2], ids[ids.len() - 1]);
        let plan = SplitPlan::from_folds(&folds, val, test)?;
        println!(
            "split: train folds {}-{} ({} records), val fold {val} ({}), test fold {test} ({})",
            ids[0],
            ids[ids.len() - 3],
            plan.train.len(),
            plan.val.len(),
            plan.test.len()
        );
    }
    Ok(())
}

fn write_cache(a: &PrepareArgs, manifest: &DatasetManifest, schema: &LabelSchema) -> CliResult<()> {
    let dir = a.out.join("cache");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let records = manifest.load_records(schema, a.csv_fs)?;
    let pre = PreprocessConfig {
        pad: false,
        ..PreprocessConfig::default()
    };
    let filtered = prepare_records(&records, &pre)?;
    let mut entries = Vec::with_capacity(filtered.len());
    for (r, e) in filtered.iter().zip(&manifest.entries) {
        let file = format!("{}.csv", r.id);
        write_csv_signal(&dir.join(&file), r)?;
        entries.push(ManifestEntry {
            path: PathBuf::from(file),
            ..e.clone()
        });
    }
    DatasetManifest::new(&dir, entries)?.write_csv(&dir.join("manifest.csv"))?;
    println!("cache: {}", dir.join("manifest.csv").display());
    Ok(())
}

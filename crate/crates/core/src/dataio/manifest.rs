//! Manifest CSV (`id,path,labels,fold`) and plain CSV signal files.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wfdb::load_wfdb_record;
use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::signal::{EcgRecord, LEADS};

/// Separator between class names in the `labels` column.
pub const LABEL_SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Header (`.hea`) or CSV signal path, relative to the manifest directory.
    pub path: PathBuf,
    pub labels: Vec<String>,
    pub fold: Option<u32>,
}

/// Ordered class names for a task. Index `i` in a [`LabelVector`] refers to `classes[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub task: Task,
    pub classes: Vec<String>,
}

impl LabelSchema {
    pub fn new(task: Task, classes: Vec<String>) -> Result<Self> {
        task.validate()?;
        if classes.len() != task.classes() {
            return Err(Error::invalid(format!("{task:?} needs {} class names, got {classes:?}", task.classes())));
        }
        let unique: HashSet<&String> = classes.iter().collect();
        if unique.len() != classes.len() {
            return Err(Error::invalid(format!("duplicate class names in {classes:?}")));
        }
        Ok(LabelSchema { task, classes })
    }

    /// Classes sorted by name from the labels that occur in `entries`.
    pub fn infer(task: Task, entries: &[ManifestEntry]) -> Result<Self> {
        let names: BTreeSet<&String> = entries.iter().flat_map(|e| &e.labels).collect();
        Self::new(task, names.into_iter().cloned().collect())
    }

    pub fn encode(&self, names: &[String]) -> Result<LabelVector> {
        let mut active = Vec::with_capacity(names.len());
        for n in names {
            match self.classes.iter().position(|c| c == n) {
                Some(i) => active.push(i),
                None => return Err(Error::invalid(format!("unknown class `{n}`, expected one of {:?}", self.classes))),
            }
        }
        LabelVector::from_active(self.task, &active)
    }

    pub fn decode(&self, labels: &LabelVector) -> Vec<String> {
        (0..self.classes.len()).filter(|&i| labels.is_active(i)).map(|i| self.classes[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.id) {
                return Err(Error::invalid(format!("duplicate record id `{}`", e.id)));
            }
        }
        Ok(DatasetManifest {
            root: root.into(),
            entries,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let need = |name: &str| col(name).ok_or_else(|| Error::format(path, format!("missing column `{name}`")));
        let (id_c, path_c, labels_c) = (need("id")?, need("path")?, need("labels")?);
        let fold_c = col("fold");
        let mut entries = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let field = |c: usize| rec.get(c).unwrap_or("").trim();
            let fold = match fold_c.map(field) {
                None | Some("") => None,
                Some(f) => Some(f.parse::<u32>().map_err(|_| Error::format(path, format!("row {}: bad fold `{f}`", row + 1)))?),
            };
            entries.push(ManifestEntry {
                id: field(id_c).to_string(),
                path: PathBuf::from(field(path_c)),
                labels: field(labels_c)
                    .split(LABEL_SEPARATOR)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect(),
                fold,
            });
        }
        Self::new(path.parent().unwrap_or(Path::new(".")), entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let io = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["id", "path", "labels", "fold"]).map_err(io)?;
        for e in &self.entries {
            let fold = e.fold.map(|f| f.to_string()).unwrap_or_default();
            let labels = e.labels.join(&LABEL_SEPARATOR.to_string());
            w.write_record([e.id.as_str(), &e.path.to_string_lossy(), &labels, &fold]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Loads every record in parallel. On failure the error lists every bad id.
    pub fn load_records(&self, schema: &LabelSchema, csv_fs: f64) -> Result<Vec<EcgRecord>> {
        let results: Vec<Result<EcgRecord>> = self
            .entries
            .par_iter()
            .map(|e| {
                let labels = schema.encode(&e.labels)?;
                let p = self.resolve(e);
                let mut r = match p.extension().and_then(|x| x.to_str()) {
                    Some("hea") => load_wfdb_record(&p, labels)?,
                    Some("csv") => read_csv_signal(&p, &e.id, csv_fs, labels)?,
                    _ => return Err(Error::format(&p, "expected a .hea or .csv signal file")),
                };
                r.id = e.id.clone();
                Ok(r)
            })
            .collect();
        let mut records = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (e, r) in self.entries.iter().zip(results) {
            match r {
                Ok(r) => records.push(r),
                Err(err) => failures.push(format!("{}: {err}", e.id)),
            }
        }
        if !failures.is_empty() {
            return Err(Error::Precondition(format!(
                "{} malformed record(s):\n  {}",
                failures.len(),
                failures.join("\n  ")
            )));
        }
        Ok(records)
    }
}

/// Twelve comma-separated columns, one row per sample, values in mV. A
/// non-numeric first row is treated as a header.
pub fn read_csv_signal(path: &Path, id: &str, fs: f64, labels: LabelVector) -> Result<EcgRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut signal = vec![Vec::new(); LEADS];
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let values: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match values {
            Ok(v) if v.len() == LEADS => v.into_iter().zip(signal.iter_mut()).for_each(|(x, l)| l.push(x)),
            Ok(v) => return Err(Error::format(path, format!("line {}: {} columns, expected {LEADS}", i + 1, v.len()))),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", i + 1))),
        }
    }
    EcgRecord::new(id, signal, fs, labels)
}

pub fn write_csv_signal(path: &Path, record: &EcgRecord) -> Result<()> {
    let mut out = String::with_capacity(record.len() * LEADS * 12);
    out.push_str(&(0..LEADS).map(|l| format!("lead{l}")).collect::<Vec<_>>().join(","));
    out.push('\n');
    for i in 0..record.len() {
        let row: Vec<String> = record.signal.iter().map(|l| l[i].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

//! Seeded pseudo-ECG generator with class-specific signatures.
//!
//! Each record is a Gaussian spike train near 1.2 Hz with a trailing T-like
//! bump, baseline wander and white noise. A positive class `c` adds two
//! signatures: a sinusoid at [`signature_frequency`] with a lead-dependent
//! sign, and an ST-like plateau after every beat on a subset of leads.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, LabelSchema, ManifestEntry};
use super::wfdb::write_wfdb_record;
use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::rng;
use crate::signal::{EcgRecord, LEADS};

const LEAD_GAIN: [f64; LEADS] = [1.0, 1.2, 0.4, -0.9, 0.5, 0.8, 0.3, 0.7, 1.1, 1.3, 1.0, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: Task,
    /// Records per stratum: `[negatives, positives]` for binary tasks, one
    /// count per class otherwise (each record carries a single class).
    pub counts: Vec<usize>,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_fs")]
    pub fs: f64,
    #[serde(default)]
    pub seed: u64,
    /// White-noise standard deviation in mV.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Multiplier on both class signatures.
    #[serde(default = "default_strength")]
    pub strength: f64,
    /// Class `c` draws signature `c + signature_offset`; lets two datasets
    /// share a signature.
    #[serde(default)]
    pub signature_offset: usize,
}

fn default_length() -> usize {
    5000
}
fn default_fs() -> f64 {
    500.0
}
fn default_noise() -> f64 {
    0.05
}
fn default_strength() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(task: Task, counts: Vec<usize>, seed: u64) -> Self {
        SyntheticSpec {
            task,
            counts,
            length: default_length(),
            fs: default_fs(),
            seed,
            noise: default_noise(),
            strength: default_strength(),
            signature_offset: 0,
        }
    }

    /// `n` records for each of `classes` classes.
    pub fn balanced(task: Task, n: usize, seed: u64) -> Self {
        let strata = match task {
            Task::Binary => 2,
            _ => task.classes(),
        };
        Self::new(task, vec![n; strata], seed)
    }

    /// Binary set with the given positive/negative counts.
    pub fn binary(positives: usize, negatives: usize, seed: u64) -> Self {
        Self::new(Task::Binary, vec![negatives, positives], seed)
    }

    fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let strata = match self.task {
            Task::Binary => 2,
            t => t.classes(),
        };
        if self.counts.len() != strata {
            return Err(Error::invalid(format!("{:?} needs {strata} counts, got {:?}", self.task, self.counts)));
        }
        if self.length == 0 || !(self.fs > 0.0) || self.noise < 0.0 {
            return Err(Error::invalid("synthetic length, fs and noise must be positive"));
        }
        Ok(())
    }

    pub fn schema(&self) -> LabelSchema {
        let classes = match self.task {
            Task::Binary => vec!["positive".to_string()],
            t => (0..t.classes()).map(|c| format!("class{c}")).collect(),
        };
        LabelSchema {
            task: self.task,
            classes,
        }
    }
}

/// Frequency of the sinusoidal signature for signature index `s`.
pub fn signature_frequency(s: usize) -> f64 {
    7.3 + 3.7 * (s % 9) as f64
}

fn wave_sign(s: usize, lead: usize) -> f64 {
    if (lead * 7 + s * 3) % 5 < 2 {
        -1.0
    } else {
        1.0
    }
}

fn st_sign(s: usize, lead: usize) -> f64 {
    [1.0, 0.0, -1.0, 0.0][(lead + 2 * s) % 4]
}

fn generate_one(spec: &SyntheticSpec, index: usize, signatures: &[usize], labels: LabelVector) -> Result<EcgRecord> {
    let mut r = rng::substream(spec.seed, "synthetic", index as u64);
    let fs = spec.fs;
    let n = spec.length;
    let duration = n as f64 / fs;
    let hr = r.random_range(1.0..1.4);
    let first = r.random_range(0.0..1.0 / hr);
    let scale = r.random_range(0.8..1.2);
    let wander_f = r.random_range(0.1..0.4);
    let wander_phase = r.random_range(0.0..std::f64::consts::TAU);
    let jitter = Normal::new(0.0, 0.02).unwrap();
    let mut beats = Vec::new();
    let mut t = first;
    while t < duration + 0.5 {
        beats.push(t + jitter.sample(&mut r));
        t += 1.0 / hr;
    }

    // single-lead template, scaled per lead below
    let mut template = vec![0.0; n];
    let mut st = vec![0.0; n];
    let (sq, stw) = (0.012, 0.04);
    for &b in &beats {
        let lo = (((b - 0.1) * fs).floor().max(0.0)) as usize;
        let hi = ((((b + 0.45) * fs).ceil()) as usize).min(n);
        for (i, v) in template.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = i as f64 / fs - b;
            *v += (-dt * dt / (2.0 * sq * sq)).exp() + 0.25 * (-(dt - 0.25).powi(2) / (2.0 * stw * stw)).exp();
        }
        let (s0, s1) = ((((b + 0.06) * fs).max(0.0)) as usize, (((b + 0.18) * fs).max(0.0)) as usize);
        for v in st.iter_mut().take(s1.min(n)).skip(s0.min(n)) {
            *v = 1.0;
        }
    }

    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).unwrap();
    let sig_phase: Vec<f64> = signatures.iter().map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut signal = vec![vec![0.0; n]; LEADS];
    for (lead, out) in signal.iter_mut().enumerate() {
        let g = LEAD_GAIN[lead] * scale;
        for (i, v) in out.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let mut x = g * template[i] + 0.1 * (std::f64::consts::TAU * wander_f * t + wander_phase).sin();
            for (&s, &ph) in signatures.iter().zip(&sig_phase) {
                x += spec.strength
                    * (0.1 * wave_sign(s, lead) * (std::f64::consts::TAU * signature_frequency(s) * t + ph).sin()
                        + 0.15 * st_sign(s, lead) * st[i]);
            }
            if spec.noise > 0.0 {
                x += noise.sample(&mut r);
            }
            *v = x;
        }
    }
    EcgRecord::new(format!("syn{index:05}"), signal, fs, labels)
}

/// Records ordered by stratum, fully determined by `spec.seed`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<(LabelSchema, Vec<EcgRecord>)> {
    spec.validate()?;
    let mut plan: Vec<(LabelVector, Vec<usize>)> = Vec::new();
    for (stratum, &count) in spec.counts.iter().enumerate() {
        let (labels, sigs) = match spec.task {
            Task::Binary if stratum == 0 => (LabelVector::new(Task::Binary, vec![0])?, vec![]),
            Task::Binary => (LabelVector::new(Task::Binary, vec![1])?, vec![spec.signature_offset]),
            t => (LabelVector::from_active(t, &[stratum])?, vec![stratum + spec.signature_offset]),
        };
        plan.extend(std::iter::repeat_n((labels, sigs), count));
    }
    let records = plan
        .into_par_iter()
        .enumerate()
        .map(|(i, (labels, sigs))| generate_one(spec, i, &sigs, labels))
        .collect::<Result<Vec<_>>>()?;
    Ok((spec.schema(), records))
}

/// Writes every record as WFDB plus a manifest CSV at `dir/manifest.csv`.
pub fn write_dataset(dir: &Path, schema: &LabelSchema, records: &[EcgRecord], folds: Option<&[u32]>) -> Result<DatasetManifest> {
    let rec_dir = dir.join("records");
    std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let entries = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            write_wfdb_record(&rec_dir, &r.id, r, 1000.0)?;
            Ok(ManifestEntry {
                id: r.id.clone(),
                path: Path::new("records").join(format!("{}.hea", r.id)),
                labels: schema.decode(&r.labels),
                fold: folds.map(|f| f[i]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(dir, entries)?;
    manifest.write_csv(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let mut spec = SyntheticSpec::balanced(Task::MultiClass { classes: 2 }, 64, 11);
        spec.length = 600;
        let (_, a) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a.len(), 128);
        assert_eq!(a.iter().filter(|r| r.labels.is_active(1)).count(), 64);
        let (_, b) = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pe_shaped_counts() {
        let mut train = SyntheticSpec::binary(222, 602, 1);
        train.length = 100;
        let (_, r) = generate_synthetic_dataset(&train).unwrap();
        assert_eq!(r.len(), 824);
        assert_eq!(r.iter().filter(|r| r.labels.is_active(0)).count(), 222);
        let mut test = SyntheticSpec::binary(39, 64, 2);
        test.length = 100;
        let (_, r) = generate_synthetic_dataset(&test).unwrap();
        assert_eq!((r.len(), r.iter().filter(|r| r.labels.is_active(0)).count()), (103, 39));
    }
}

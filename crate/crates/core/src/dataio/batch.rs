//! Preprocessing pipeline and mini-batch iteration.
//!
//! Order: bandpass, pad/truncate, segment, normalize, augment. The first two
//! steps are deterministic and run once per dataset ([`prepare_records`]);
//! the rest run per batch.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augmentations, AugmentConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{
    apply_segment, butterworth_bandpass, normalize, pad_or_truncate, sample_segment, EcgRecord, FilterSpec,
    NormalizationMethod, SegmentSpec, LEADS,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub denoise: bool,
    pub filter: FilterSpec,
    /// Zero-pad or truncate every record to `pad_length` before segmentation.
    pub pad: bool,
    pub pad_length: usize,
    pub segment_length: usize,
    pub normalize: bool,
    pub normalization: NormalizationMethod,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            denoise: true,
            filter: FilterSpec::default(),
            pad: true,
            pad_length: 5000,
            segment_length: 2048,
            normalize: true,
            normalization: NormalizationMethod::ZScore,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length == 0 {
            return Err(Error::invalid("segment_length must be at least 1"));
        }
        if self.pad && self.pad_length < self.segment_length {
            return Err(Error::invalid(format!(
                "pad_length {} is shorter than segment_length {}",
                self.pad_length, self.segment_length
            )));
        }
        Ok(())
    }

    /// Deterministic part of the pipeline: bandpass then length regularization.
    pub fn prepare(&self, record: &EcgRecord) -> Result<EcgRecord> {
        let r = if self.denoise {
            butterworth_bandpass(record, &self.filter)?
        } else {
            record.clone()
        };
        if self.pad {
            pad_or_truncate(&r, self.pad_length)
        } else {
            Ok(r)
        }
    }

    /// Segment (random start when `rng` is given, start 0 otherwise) and normalize.
    pub fn view(&self, record: &EcgRecord, rng: Option<&mut rand_chacha::ChaCha8Rng>) -> Result<EcgRecord> {
        let l = self.segment_length;
        if record.len() < l {
            return Err(Error::invalid(format!(
                "record {} has {} samples, fewer than the segment length {l}; enable padding",
                record.id,
                record.len()
            )));
        }
        let seg = match rng {
            Some(r) => sample_segment(record.len(), l, r)?,
            None => SegmentSpec {
                len: l,
                start: 0,
                source_len: record.len(),
            },
        };
        let r = apply_segment(record, &seg)?;
        Ok(if self.normalize { normalize(&r, self.normalization) } else { r })
    }
}

/// Runs [`PreprocessConfig::prepare`] over a dataset in parallel.
pub fn prepare_records(records: &[EcgRecord], cfg: &PreprocessConfig) -> Result<Vec<EcgRecord>> {
    cfg.validate()?;
    records.par_iter().map(|r| cfg.prepare(r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, 12, l]`.
    pub x: Tensor,
    /// `[B, k]` 0/1 targets.
    pub y: Tensor,
    /// Positions in the record slice.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Shuffled order, random segments and augmentation, keyed by `(seed, epoch)`.
    Train { seed: u64, epoch: u64 },
    /// Input order, segments from sample 0, no augmentation.
    Eval,
}

/// Ordered mini-batches over `indices` of prepared records. Per-record
/// randomness comes from its own substream, so batches are identical
/// regardless of thread scheduling.
pub struct BatchIter<'a> {
    records: &'a [EcgRecord],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    pre: &'a PreprocessConfig,
    augment: &'a AugmentConfig,
    mode: Mode,
}

pub fn batch_iterator<'a>(
    records: &'a [EcgRecord],
    indices: &[usize],
    batch_size: usize,
    pre: &'a PreprocessConfig,
    augment: &'a AugmentConfig,
    mode: Mode,
) -> Result<BatchIter<'a>> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot iterate over an empty split"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= records.len()) {
        return Err(Error::invalid(format!("record index {i} out of range ({} records)", records.len())));
    }
    augment.validate()?;
    let mut order = indices.to_vec();
    if let Mode::Train { seed, epoch } = mode {
        order.shuffle(&mut rng::substream(seed, "shuffle", epoch));
    }
    Ok(BatchIter {
        records,
        order,
        pos: 0,
        batch_size,
        pre,
        augment,
        mode,
    })
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn sample(&self, i: usize) -> Result<EcgRecord> {
        let r = &self.records[i];
        match self.mode {
            Mode::Eval => self.pre.view(r, None),
            Mode::Train { seed, epoch } => {
                let mut g = rng::substream(seed, "sample", rng::stream_id(epoch, i as u64));
                let v = self.pre.view(r, Some(&mut g))?;
                apply_augmentations(&v, self.augment, &mut g)
            }
        }
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        let samples: Result<Vec<EcgRecord>> = idx.par_iter().map(|&i| self.sample(i)).collect();
        Some(samples.and_then(|s| {
            let l = self.pre.segment_length;
            let k = s[0].labels.values().len();
            let mut x = Vec::with_capacity(s.len() * LEADS * l);
            let mut y = Vec::with_capacity(s.len() * k);
            for r in &s {
                if r.labels.values().len() != k {
                    return Err(Error::invalid("records in one batch disagree on the label count"));
                }
                r.signal.iter().for_each(|lead| x.extend_from_slice(lead));
                y.extend(r.labels.to_f64());
            }
            Ok(Batch {
                x: Tensor::new(vec![s.len(), LEADS, l], x)?,
                y: Tensor::new(vec![s.len(), k], y)?,
                indices: idx,
            })
        }))
    }
}

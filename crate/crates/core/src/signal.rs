//! Preprocessing of 12-lead recordings: zero-phase Butterworth bandpass,
//! random segment selection, length regularization and per-lead normalization.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelVector;

pub const LEADS: usize = 12;

/// A 12-lead recording in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub id: String,
    /// One row per lead, all the same length.
    pub signal: Vec<Vec<f64>>,
    pub fs: f64,
    pub labels: LabelVector,
}

impl EcgRecord {
    pub fn new(id: impl Into<String>, signal: Vec<Vec<f64>>, fs: f64, labels: LabelVector) -> Result<Self> {
        let id = id.into();
        if signal.len() != LEADS {
            return Err(Error::invalid(format!("record {id}: expected {LEADS} leads, got {}", signal.len())));
        }
        let m = signal[0].len();
        if m == 0 {
            return Err(Error::invalid(format!("record {id}: empty signal")));
        }
        if signal.iter().any(|l| l.len() != m) {
            return Err(Error::invalid(format!("record {id}: leads differ in length")));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::invalid(format!("record {id}: sampling rate {fs} must be positive")));
        }
        if let Some((lead, _)) = signal.iter().enumerate().find(|(_, l)| l.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("record {id}, lead {lead}")));
        }
        Ok(EcgRecord { id, signal, fs, labels })
    }

    pub fn len(&self) -> usize {
        self.signal[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn with_signal(&self, signal: Vec<Vec<f64>>) -> EcgRecord {
        EcgRecord {
            id: self.id.clone(),
            signal,
            fs: self.fs,
            labels: self.labels.clone(),
        }
    }

    fn map_leads(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> EcgRecord {
        self.with_signal(self.signal.iter().map(|l| f(l)).collect())
    }
}

/// Butterworth bandpass parameters; the sampling rate comes from the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut: f64,
    pub high_cut: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            order: 2,
            low_cut: 1.0,
            high_cut: 45.0,
        }
    }
}

/// One second-order section, `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Steady-state state vector for a unit step (transposed direct form II).
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        // (I - A^T) z = b[1..] - a[1..] b0
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let det = (1.0 + a1) + a2;
        let z0 = (r0 + r1) / det;
        let z1 = r1 - a2 * z0;
        [z0, z1]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let y = b0 * *v + z[0];
            z[0] = b1 * *v - a1 * y + z[1];
            z[1] = b2 * *v - a2 * y;
            *v = y;
        }
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Digital Butterworth bandpass of prototype order `order` (the cascade has
    /// order `2 * order`), designed by prewarped bilinear transform.
    pub fn butterworth_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate {fs} must be positive")));
        }
        if fs <= 2.0 * high {
            return Err(Error::invalid(format!(
                "high cut-off {high} Hz is at or above the Nyquist frequency {} Hz",
                fs / 2.0
            )));
        }
        if !(0.0 < low && low < high) {
            return Err(Error::invalid(format!("band edges must satisfy 0 < low < high, got {low}..{high}")));
        }
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (std::f64::consts::PI * low / fs).tan();
        let w2 = fs2 * (std::f64::consts::PI * high / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0sq).sqrt();
            poles.push(p + disc);
            poles.push(p - disc);
        }
        // analog gain bw^N, N zeros at s = 0 and N at infinity
        let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
        let zpoles: Vec<Complex64> = poles
            .iter()
            .map(|&p| {
                gain /= fs2 - p;
                (fs2 + p) / (fs2 - p)
            })
            .collect();

        let mut upper: Vec<Complex64> = zpoles.iter().copied().filter(|p| p.im > 1e-12).collect();
        let mut real: Vec<f64> = zpoles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.sort_by(f64::total_cmp);
        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
            });
        }
        let g = gain.re;
        for v in sections[0].b.iter_mut() {
            *v *= g;
        }
        Ok(Sos { sections })
    }

    /// Complex response at normalized angular frequency `omega` (radians/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(omega)).product()
    }

    /// Single causal pass with initial states.
    fn filter_with(&self, x: &mut [f64], x0: f64) {
        let mut scale = x0;
        for s in &self.sections {
            let z = s.step_state();
            s.run(x, [z[0] * scale, z[1] * scale]);
            scale *= s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.filter_with(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.filter_with(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Filters each lead independently with the same zero-phase bandpass.
pub fn butterworth_bandpass(record: &EcgRecord, spec: &FilterSpec) -> Result<EcgRecord> {
    let sos = Sos::butterworth_bandpass(spec.order, spec.low_cut, spec.high_cut, record.fs)?;
    Ok(record.map_leads(|l| sos.filtfilt(l)))
}

/// Window `[start, start + len)` within a recording of `source_len` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub len: usize,
    pub start: usize,
    pub source_len: usize,
}

/// Draws `s` uniformly from `0..=m-l`.
pub fn sample_segment<R: Rng + ?Sized>(source_len: usize, len: usize, rng: &mut R) -> Result<SegmentSpec> {
    if len == 0 {
        return Err(Error::invalid("segment length must be at least 1"));
    }
    if len > source_len {
        return Err(Error::invalid(format!(
            "segment length {len} exceeds the recording length {source_len}; pad the record first"
        )));
    }
    Ok(SegmentSpec {
        len,
        start: rng.random_range(0..=source_len - len),
        source_len,
    })
}

/// Cuts the same window out of every lead.
pub fn apply_segment(record: &EcgRecord, seg: &SegmentSpec) -> Result<EcgRecord> {
    if seg.source_len != record.len() || seg.start + seg.len > record.len() {
        return Err(Error::invalid(format!(
            "segment {}..{} does not fit a recording of {} samples",
            seg.start,
            seg.start + seg.len,
            record.len()
        )));
    }
    Ok(record.map_leads(|l| l[seg.start..seg.start + seg.len].to_vec()))
}

/// Random window of `len` samples with one start shared by all leads.
pub fn segment_extract<R: Rng + ?Sized>(record: &EcgRecord, len: usize, rng: &mut R) -> Result<EcgRecord> {
    let seg = sample_segment(record.len(), len, rng)?;
    apply_segment(record, &seg)
}

/// Keeps the first `target` samples or appends zeros.
pub fn pad_or_truncate(record: &EcgRecord, target: usize) -> Result<EcgRecord> {
    if target == 0 {
        return Err(Error::invalid("target length must be at least 1"));
    }
    if record.len() == target {
        return Ok(record.clone());
    }
    Ok(record.map_leads(|l| {
        let mut v = l[..l.len().min(target)].to_vec();
        v.resize(target, 0.0);
        v
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMethod {
    MinMax,
    ZScore,
    RScale,
    LogScale,
    L2,
}

impl NormalizationMethod {
    pub const ALL: [NormalizationMethod; 5] = [
        NormalizationMethod::MinMax,
        NormalizationMethod::ZScore,
        NormalizationMethod::RScale,
        NormalizationMethod::LogScale,
        NormalizationMethod::L2,
    ];
}

/// Guard for constant or all-zero leads.
pub const NORM_EPS: f64 = 1e-8;

fn guarded(d: f64) -> f64 {
    if d.abs() < NORM_EPS {
        d + NORM_EPS
    } else {
        d
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Normalizes one lead.
pub fn normalize_lead(x: &[f64], method: NormalizationMethod) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    match method {
        NormalizationMethod::MinMax => {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let d = guarded(hi - lo);
            x.iter().map(|v| ((v - lo) / d).clamp(0.0, 1.0)).collect()
        }
        NormalizationMethod::ZScore => {
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let d = guarded(var.sqrt());
            x.iter().map(|v| (v - mean) / d).collect()
        }
        NormalizationMethod::RScale => {
            let mut s = x.to_vec();
            s.sort_by(f64::total_cmp);
            let med = percentile(&s, 0.5);
            let d = guarded(percentile(&s, 0.75) - percentile(&s, 0.25));
            x.iter().map(|v| (v - med) / d).collect()
        }
        NormalizationMethod::LogScale => x.iter().map(|v| v.signum() * v.abs().ln_1p()).collect(),
        NormalizationMethod::L2 => {
            let d = guarded(x.iter().map(|v| v * v).sum::<f64>().sqrt());
            x.iter().map(|v| v / d).collect()
        }
    }
}

pub fn normalize(record: &EcgRecord, method: NormalizationMethod) -> EcgRecord {
    record.map_leads(|l| normalize_lead(l, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(signal: Vec<Vec<f64>>) -> EcgRecord {
        EcgRecord::new("r", signal, 500.0, LabelVector::new(Task::Binary, vec![0]).unwrap()).unwrap()
    }

    #[test]
    fn rejects_wrong_lead_count() {
        let labels = LabelVector::new(Task::Binary, vec![1]).unwrap();
        assert!(EcgRecord::new("x", vec![vec![0.0; 4]; 11], 500.0, labels.clone()).is_err());
        assert!(EcgRecord::new("x", vec![vec![f64::NAN; 4]; 12], 500.0, labels).is_err());
    }

    #[test]
    fn nyquist_violation_is_an_error() {
        let r = EcgRecord {
            fs: 80.0,
            ..record(vec![vec![0.0; 100]; 12])
        };
        let err = butterworth_bandpass(&r, &FilterSpec::default()).unwrap_err();
        assert!(err.to_string().contains("Nyquist"));
    }

    #[test]
    fn zero_lead_stays_zero() {
        let r = record(vec![vec![0.0; 500]; 12]);
        let f = butterworth_bandpass(&r, &FilterSpec::default()).unwrap();
        assert!(f.signal.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_is_removed() {
        let r = record(vec![vec![1.0; 5000]; 12]);
        let f = butterworth_bandpass(&r, &FilterSpec::default()).unwrap();
        let worst = f.signal.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn unity_gain_at_geometric_center() {
        let sos = Sos::butterworth_bandpass(2, 1.0, 45.0, 500.0).unwrap();
        let fs2: f64 = 1000.0;
        let w1 = fs2 * (std::f64::consts::PI / 500.0).tan();
        let w2 = fs2 * (std::f64::consts::PI * 45.0 / 500.0).tan();
        let omega = 2.0 * ((w1 * w2).sqrt() / fs2).atan();
        assert!((sos.response(omega).norm() - 1.0).abs() < 1e-12);
        assert_eq!(sos.sections.len(), 2);
    }

    #[test]
    fn segment_full_length_is_identity() {
        let r = record((0..12).map(|i| vec![i as f64; 50]).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(segment_extract(&r, 50, &mut rng).unwrap(), r);
        assert!(segment_extract(&r, 51, &mut rng).is_err());
    }

    #[test]
    fn pad_and_truncate() {
        let r = record(vec![(0..6000).map(|i| i as f64).collect(); 12]);
        let t = pad_or_truncate(&r, 5000).unwrap();
        assert_eq!(t.len(), 5000);
        assert_eq!(t.signal[3][4999], 4999.0);
        let short = record(vec![vec![1.0; 4000]; 12]);
        let p = pad_or_truncate(&short, 5000).unwrap();
        assert!(p.signal.iter().all(|l| l[4000..].iter().all(|&v| v == 0.0) && l[3999] == 1.0));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_lead(&[0.0, 5.0, 10.0], NormalizationMethod::MinMax), vec![0.0, 0.5, 1.0]);
        let l2 = normalize_lead(&[3.0, 4.0], NormalizationMethod::L2);
        assert!((l2[0] - 0.6).abs() < 1e-15 && (l2[1] - 0.8).abs() < 1e-15);
        assert!(normalize_lead(&[2.5; 8], NormalizationMethod::ZScore).iter().all(|&v| v == 0.0));
        assert!(normalize_lead(&[0.0; 8], NormalizationMethod::L2).iter().all(|&v| v == 0.0));
        let r = normalize_lead(&[1.0, 2.0, 3.0, 4.0, 100.0], NormalizationMethod::RScale);
        // median 3, quartiles 2 and 4
        assert_eq!(r, vec![-1.0, -0.5, 0.0, 0.5, 48.5]);
        let lg = normalize_lead(&[-(std::f64::consts::E - 1.0), 0.0], NormalizationMethod::LogScale);
        assert!((lg[0] + 1.0).abs() < 1e-15 && lg[1] == 0.0);
    }
}

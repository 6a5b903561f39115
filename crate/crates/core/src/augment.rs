//! Training-time augmentations.
//!
//! Sampling and application are split: [`sample_plan`] draws every random
//! decision up front, and [`apply_plan`] is a pure function of the record and
//! the plan. Transforms run in a fixed order: flip, random drop, lead drop,
//! square pulse, sine.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{EcgRecord, LEADS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipConfig {
    pub enabled: bool,
    pub p: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig { enabled: true, p: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomDropConfig {
    pub enabled: bool,
    pub p: f64,
    /// Fraction of sample positions zeroed, drawn uniformly from `[min, max]`.
    pub fraction: [f64; 2],
}

impl Default for RandomDropConfig {
    fn default() -> Self {
        RandomDropConfig {
            enabled: true,
            p: 0.3,
            fraction: [0.05, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeadDropConfig {
    pub enabled: bool,
    pub p: f64,
    /// Number of leads zeroed, drawn uniformly from `min..=max`.
    pub leads: [usize; 2],
}

impl Default for LeadDropConfig {
    fn default() -> Self {
        LeadDropConfig {
            enabled: true,
            p: 0.3,
            leads: [1, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveConfig {
    pub enabled: bool,
    pub p: f64,
    pub amplitude: [f64; 2],
    /// Hz.
    pub frequency: [f64; 2],
    /// Amplitudes are multiples of each lead's standard deviation when true,
    /// millivolts otherwise.
    pub relative_amplitude: bool,
}

impl Default for WaveConfig {
    fn default() -> Self {
        WaveConfig {
            enabled: true,
            p: 0.3,
            amplitude: [0.05, 0.2],
            frequency: [0.1, 5.0],
            relative_amplitude: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: FlipConfig,
    pub random_drop: RandomDropConfig,
    pub lead_drop: LeadDropConfig,
    pub square_pulse: WaveConfig,
    pub sine: WaveConfig,
}

fn check_p(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name}: probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::invalid(format!("{name}: range {r:?} must be finite with min <= max")));
    }
    Ok(())
}

impl AugmentConfig {
    /// Every transform switched off.
    pub fn disabled() -> Self {
        let mut c = AugmentConfig::default();
        c.flip.enabled = false;
        c.random_drop.enabled = false;
        c.lead_drop.enabled = false;
        c.square_pulse.enabled = false;
        c.sine.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        check_p("flip", self.flip.p)?;
        check_p("random_drop", self.random_drop.p)?;
        check_p("lead_drop", self.lead_drop.p)?;
        check_p("square_pulse", self.square_pulse.p)?;
        check_p("sine", self.sine.p)?;
        check_range("random_drop.fraction", self.random_drop.fraction)?;
        if self.random_drop.fraction[0] < 0.0 || self.random_drop.fraction[1] >= 1.0 {
            return Err(Error::invalid(format!(
                "random_drop.fraction {:?} must lie in [0, 1)",
                self.random_drop.fraction
            )));
        }
        let [lo, hi] = self.lead_drop.leads;
        if lo > hi || hi >= LEADS {
            return Err(Error::invalid(format!(
                "lead_drop.leads {:?} must satisfy min <= max < {LEADS}",
                self.lead_drop.leads
            )));
        }
        for (name, w) in [("square_pulse", &self.square_pulse), ("sine", &self.sine)] {
            check_range(&format!("{name}.amplitude"), w.amplitude)?;
            check_range(&format!("{name}.frequency"), w.frequency)?;
            if w.amplitude[0] < 0.0 || w.frequency[0] < 0.0 {
                return Err(Error::invalid(format!("{name}: amplitude and frequency must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Additive periodic term with one amplitude per lead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: [f64; LEADS],
    pub frequency: f64,
    pub phase: f64,
}

impl Wave {
    pub fn uniform(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Wave {
            amplitude: [amplitude; LEADS],
            frequency,
            phase,
        }
    }

    fn angle(&self, i: usize, fs: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency * i as f64 / fs + self.phase
    }
}

/// All random decisions for one record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPlan {
    pub flip: bool,
    pub drop_positions: Option<Vec<usize>>,
    pub drop_leads: Option<Vec<usize>>,
    pub square_pulse: Option<Wave>,
    pub sine: Option<Wave>,
}

pub fn flip(record: &EcgRecord) -> EcgRecord {
    let mut out = record.clone();
    out.signal.iter_mut().flatten().for_each(|v| *v = -*v);
    out
}

/// Zeroes `floor(fraction * len)` positions, the same ones in every lead.
pub fn random_drop<R: Rng + ?Sized>(record: &EcgRecord, fraction: f64, rng: &mut R) -> Result<EcgRecord> {
    let positions = drop_positions(record.len(), fraction, rng)?;
    Ok(zero_positions(record, &positions))
}

fn drop_positions<R: Rng + ?Sized>(len: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("drop fraction {fraction} must lie in [0, 1)")));
    }
    let count = (fraction * len as f64).floor() as usize;
    Ok(sample(rng, len, count).into_vec())
}

fn zero_positions(record: &EcgRecord, positions: &[usize]) -> EcgRecord {
    let mut out = record.clone();
    for lead in out.signal.iter_mut() {
        for &i in positions {
            lead[i] = 0.0;
        }
    }
    out
}

/// Zeroes `k` distinct leads.
pub fn lead_drop<R: Rng + ?Sized>(record: &EcgRecord, k: usize, rng: &mut R) -> Result<EcgRecord> {
    let leads = drop_leads(k, rng)?;
    Ok(zero_leads(record, &leads))
}

fn drop_leads<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k >= LEADS {
        return Err(Error::invalid(format!("dropping {k} leads would leave no signal")));
    }
    Ok(sample(rng, LEADS, k).into_vec())
}

fn zero_leads(record: &EcgRecord, leads: &[usize]) -> EcgRecord {
    let mut out = record.clone();
    for &l in leads {
        out.signal[l].iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

fn add_wave(record: &EcgRecord, wave: &Wave, shape: impl Fn(f64) -> f64) -> EcgRecord {
    let mut out = record.clone();
    let fs = record.fs;
    for (lead, &a) in out.signal.iter_mut().zip(&wave.amplitude) {
        if a == 0.0 {
            continue;
        }
        for (i, v) in lead.iter_mut().enumerate() {
            *v += a * shape(wave.angle(i, fs));
        }
    }
    out
}

/// Adds a ±amplitude square wave.
pub fn square_pulse(record: &EcgRecord, wave: &Wave) -> EcgRecord {
    add_wave(record, wave, |t| if t.rem_euclid(2.0 * std::f64::consts::PI) < std::f64::consts::PI { 1.0 } else { -1.0 })
}

pub fn sine(record: &EcgRecord, wave: &Wave) -> EcgRecord {
    add_wave(record, wave, f64::sin)
}

fn uniform<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn lead_std(record: &EcgRecord) -> [f64; LEADS] {
    let mut out = [0.0; LEADS];
    for (o, l) in out.iter_mut().zip(&record.signal) {
        let n = l.len() as f64;
        let m = l.iter().sum::<f64>() / n;
        *o = (l.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    }
    out
}

fn sample_wave<R: Rng + ?Sized>(cfg: &WaveConfig, scale: &[f64; LEADS], rng: &mut R) -> Wave {
    let a = uniform(cfg.amplitude, rng);
    let frequency = uniform(cfg.frequency, rng);
    let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let mut amplitude = [a; LEADS];
    if cfg.relative_amplitude {
        for (x, s) in amplitude.iter_mut().zip(scale) {
            *x *= s;
        }
    }
    Wave {
        amplitude,
        frequency,
        phase,
    }
}

/// Draws the random decisions for `record`. Relative wave amplitudes are
/// scaled by the lead deviations of `record` as given.
pub fn sample_plan<R: Rng + ?Sized>(record: &EcgRecord, cfg: &AugmentConfig, rng: &mut R) -> Result<AugmentPlan> {
    cfg.validate()?;
    let fires = |enabled: bool, p: f64, rng: &mut R| enabled && p > 0.0 && rng.random_bool(p);
    let mut plan = AugmentPlan {
        flip: fires(cfg.flip.enabled, cfg.flip.p, rng),
        ..AugmentPlan::default()
    };
    if fires(cfg.random_drop.enabled, cfg.random_drop.p, rng) {
        let frac = uniform(cfg.random_drop.fraction, rng);
        plan.drop_positions = Some(drop_positions(record.len(), frac, rng)?);
    }
    if fires(cfg.lead_drop.enabled, cfg.lead_drop.p, rng) {
        let [lo, hi] = cfg.lead_drop.leads;
        let k = rng.random_range(lo..=hi);
        plan.drop_leads = Some(drop_leads(k, rng)?);
    }
    let scale = lead_std(record);
    if fires(cfg.square_pulse.enabled, cfg.square_pulse.p, rng) {
        plan.square_pulse = Some(sample_wave(&cfg.square_pulse, &scale, rng));
    }
    if fires(cfg.sine.enabled, cfg.sine.p, rng) {
        plan.sine = Some(sample_wave(&cfg.sine, &scale, rng));
    }
    Ok(plan)
}

pub fn apply_plan(record: &EcgRecord, plan: &AugmentPlan) -> Result<EcgRecord> {
    let mut out = if plan.flip { flip(record) } else { record.clone() };
    if let Some(pos) = &plan.drop_positions {
        if pos.iter().any(|&i| i >= out.len()) {
            return Err(Error::invalid("drop position beyond the record length"));
        }
        out = zero_positions(&out, pos);
    }
    if let Some(leads) = &plan.drop_leads {
        out = zero_leads(&out, leads);
    }
    if let Some(w) = &plan.square_pulse {
        out = square_pulse(&out, w);
    }
    if let Some(w) = &plan.sine {
        out = sine(&out, w);
    }
    Ok(out)
}

pub fn apply_augmentations<R: Rng + ?Sized>(record: &EcgRecord, cfg: &AugmentConfig, rng: &mut R) -> Result<EcgRecord> {
    let plan = sample_plan(record, cfg, rng)?;
    apply_plan(record, &plan)
}

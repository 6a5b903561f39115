use ecg_core::augment::{apply_augmentations, apply_plan, sample_plan, sine, square_pulse, AugmentConfig, AugmentPlan, Wave};
use ecg_core::labels::{LabelVector, Task};
use ecg_core::signal::{EcgRecord, LEADS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn record(len: usize, seed: u64) -> EcgRecord {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = (0..LEADS).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    EcgRecord::new("p", signal, 500.0, LabelVector::new(Task::Binary, vec![1]).unwrap()).unwrap()
}

#[test]
fn sine_term_is_the_configured_sinusoid() {
    let mut cfg = AugmentConfig::disabled();
    cfg.sine.enabled = true;
    cfg.sine.p = 1.0;
    cfg.sine.amplitude = [0.15, 0.15];
    cfg.sine.frequency = [3.0, 3.0];
    cfg.sine.relative_amplitude = false;
    let r = record(2048, 4);
    let out = apply_augmentations(&r, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    for (a, b) in r.signal.iter().zip(&out.signal) {
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        // least-squares fit of a sin + b cos at 3 Hz
        let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, v) in d.iter().enumerate() {
            let (s, c) = (2.0 * std::f64::consts::PI * 3.0 * i as f64 / 500.0).sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += v * s;
            yc += v * c;
        }
        let det = ss * cc - sc * sc;
        let (fa, fb) = ((ys * cc - yc * sc) / det, (yc * ss - ys * sc) / det);
        assert!((fa.hypot(fb) - 0.15).abs() < 1e-9);
        let resid = d
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (s, c) = (2.0 * std::f64::consts::PI * 3.0 * i as f64 / 500.0).sin_cos();
                (v - fa * s - fb * c).abs()
            })
            .fold(0.0f64, f64::max);
        assert!(resid < 1e-9);
    }
}

fn full_config() -> AugmentConfig {
    let mut cfg = AugmentConfig::default();
    cfg.flip.p = 0.5;
    cfg.random_drop.p = 0.5;
    cfg.lead_drop.p = 0.5;
    cfg.square_pulse.p = 0.5;
    cfg.sine.p = 0.5;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shape_is_preserved(len in 16usize..400, seed: u64) {
        let r = record(len, seed);
        let out = apply_augmentations(&r, &full_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(out.signal.len(), LEADS);
        prop_assert!(out.signal.iter().all(|l| l.len() == len));
    }

    #[test]
    fn fixed_seed_is_deterministic(seed: u64) {
        let r = record(128, seed);
        let a = apply_augmentations(&r, &full_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = apply_augmentations(&r, &full_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bits = |x: &EcgRecord| x.signal.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn additive_terms_commute(seed: u64, a1 in 0.0f64..1.0, a2 in 0.0f64..1.0, f1 in 0.1f64..5.0, f2 in 0.1f64..5.0) {
        let r = record(200, seed);
        let p = Wave::uniform(a1, f1, 0.4);
        let s = Wave::uniform(a2, f2, 1.1);
        let x = sine(&square_pulse(&r, &p), &s);
        let y = square_pulse(&sine(&r, &s), &p);
        for (u, v) in x.signal.iter().flatten().zip(y.signal.iter().flatten()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_application_is_pure(seed: u64) {
        let r = record(150, seed);
        let plan = sample_plan(&r, &full_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(apply_plan(&r, &plan).unwrap(), apply_plan(&r, &plan).unwrap());
        prop_assert_eq!(apply_plan(&r, &AugmentPlan::default()).unwrap(), r);
    }
}

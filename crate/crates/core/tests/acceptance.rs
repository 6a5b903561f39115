//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `ECG_ACCEPTANCE=1,4` runs a subset. Criterion 10 needs a PTB-XL manifest
//! in `ECG_PTBXL_MANIFEST` and is skipped otherwise.

use std::time::{Duration, Instant};

use ecg_core::augment::AugmentConfig;
use ecg_core::autodiff::{gradcheck, gradcheck_params, Conv2dGeometry, GradcheckOptions, Graph, PoolGeometry, Var};
use ecg_core::dataio::{
    generate_synthetic_dataset, prepare_records, ptbxl_split, DatasetManifest, LabelSchema, PreprocessConfig, SyntheticSpec,
};
use ecg_core::labels::Task;
use ecg_core::learn::{
    compute_metrics, evaluate, focal_loss, focal_term, train, train_with, weighted_bce, Control, FocalLossParams, History, Loss,
    LossConfig, OptimizerConfig, TrainData, TrainSettings,
};
use ecg_core::models::{build, Architecture, HeadSpec, HyperParams, Model, ModelSpec};
use ecg_core::rng::substream;
use ecg_core::signal::{sample_segment, EcgRecord, NormalizationMethod, Sos};
use ecg_core::transfer::{adapt_head, finetune, load_checkpoint, save_checkpoint, Checkpoint, FineTuneMode, Provenance};
use ecg_core::{Result, Tensor};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = std::result::Result<String, String>;

fn ok_or(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = substream(seed, "acceptance", 0);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

/// Scalar probe `sum(y * w)` with fixed random `w`, so no gradient is uniform.
fn probe(g: &Graph, y: Var) -> Result<Var> {
    let w = g.constant(random_tensor(&g.shape(y), 99));
    Ok(g.sum(g.mul(y, w)?))
}

type Prim = (&'static str, Vec<usize>, Box<dyn Fn(&Graph, Var) -> Result<Var>>);

fn primitives() -> Vec<Prim> {
    let c = random_tensor;
    let pos = |shape: &[usize], seed: u64| Tensor::new(shape.to_vec(), random_tensor(shape, seed).data().iter().map(|v| 1.5 + v).collect()).unwrap();
    let mut v: Vec<Prim> = Vec::new();
    macro_rules! prim {
        ($name:expr, $shape:expr, $f:expr) => {
            v.push(($name, $shape.to_vec(), Box::new($f)))
        };
    }
    prim!("add", [3, 4], move |g: &Graph, x| g.add(x, g.constant(c(&[3, 4], 1))));
    prim!("add broadcast", [4], move |g: &Graph, x| g.add(g.constant(c(&[3, 4], 1)), x));
    prim!("sub", [3, 4], move |g: &Graph, x| g.sub(g.constant(c(&[3, 4], 2)), x));
    prim!("mul", [3, 4], move |g: &Graph, x| g.mul(x, g.constant(c(&[3, 4], 3))));
    prim!("div numerator", [3, 4], move |g: &Graph, x| g.div(x, g.constant(pos(&[3, 4], 4))));
    prim!("div denominator", [3, 4], move |g: &Graph, x| g.div(g.constant(c(&[3, 4], 5)), g.add_scalar(g.square(x), 0.5)));
    prim!("relu", [3, 4], |g: &Graph, x| Ok(g.relu(x)));
    prim!("elu", [3, 4], |g: &Graph, x| Ok(g.elu(x)));
    prim!("sigmoid", [3, 4], |g: &Graph, x| Ok(g.sigmoid(x)));
    prim!("tanh", [3, 4], |g: &Graph, x| Ok(g.tanh(x)));
    prim!("exp", [3, 4], |g: &Graph, x| Ok(g.exp(x)));
    prim!("neg", [3, 4], |g: &Graph, x| Ok(g.neg(x)));
    prim!("scale", [3, 4], |g: &Graph, x| Ok(g.scale(x, -2.5)));
    prim!("add_scalar", [3, 4], |g: &Graph, x| Ok(g.add_scalar(x, 0.7)));
    prim!("square", [3, 4], |g: &Graph, x| Ok(g.square(x)));
    prim!("sum", [3, 4], |g: &Graph, x| Ok(g.sum(g.square(x))));
    prim!("mean", [3, 4], |g: &Graph, x| Ok(g.mean(g.square(x))));
    prim!("mean_axis", [2, 3, 4], |g: &Graph, x| g.mean_axis(x, 1));
    prim!("reshape", [2, 3, 4], |g: &Graph, x| g.reshape(x, &[6, 4]));
    prim!("concat", [2, 3], move |g: &Graph, x| g.concat(&[x, g.constant(c(&[2, 2], 6)), x], 1));
    prim!("slice", [2, 5, 3], |g: &Graph, x| g.slice(x, 1, 1, 4));
    prim!("softmax", [3, 5], |g: &Graph, x| Ok(g.softmax(x)));
    prim!("transpose", [2, 3, 4], |g: &Graph, x| g.transpose(x, 1, 2));
    prim!("matmul lhs", [2, 3, 4], move |g: &Graph, x| g.matmul(x, g.constant(c(&[2, 4, 5], 7))));
    prim!("matmul rhs", [4, 5], move |g: &Graph, x| g.matmul(g.constant(c(&[2, 3, 4], 8)), x));
    prim!("linear input", [2, 3, 4], move |g: &Graph, x| {
        g.linear(x, g.constant(c(&[5, 4], 9)), Some(g.constant(c(&[5], 10))))
    });
    prim!("linear weight", [5, 4], move |g: &Graph, w| g.linear(g.constant(c(&[3, 4], 11)), w, None));
    prim!("linear bias", [5], move |g: &Graph, b| g.linear(g.constant(c(&[3, 4], 11)), g.constant(c(&[5, 4], 9)), Some(b)));
    prim!("conv1d input", [2, 3, 11], move |g: &Graph, x| {
        g.conv1d(x, g.constant(c(&[4, 3, 3], 12)), Some(g.constant(c(&[4], 13))), 2, 1)
    });
    prim!("conv1d weight", [4, 3, 3], move |g: &Graph, w| g.conv1d(g.constant(c(&[2, 3, 11], 14)), w, None, 2, 1));
    prim!("conv1d bias", [4], move |g: &Graph, b| {
        g.conv1d(g.constant(c(&[2, 3, 11], 14)), g.constant(c(&[4, 3, 3], 12)), Some(b), 1, 0)
    });
    let geo = Conv2dGeometry {
        stride: (1, 2),
        padding: (0, 1),
        groups: 2,
    };
    prim!("conv2d grouped input", [2, 2, 3, 7], move |g: &Graph, x| g.conv2d(x, g.constant(c(&[4, 1, 2, 3], 15)), None, geo));
    prim!("conv2d grouped weight", [4, 1, 2, 3], move |g: &Graph, w| {
        g.conv2d(g.constant(c(&[2, 2, 3, 7], 16)), w, Some(g.constant(c(&[4], 17))), geo)
    });
    let pool = PoolGeometry {
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    prim!("max_pool1d", [2, 3, 9], move |g: &Graph, x| g.max_pool1d(x, pool));
    prim!("avg_pool1d", [2, 3, 9], |g: &Graph, x| g.avg_pool1d(x, 3, 2));
    prim!("global_avg_pool", [2, 3, 9], |g: &Graph, x| g.global_avg_pool(x));
    prim!("batch_norm input", [4, 3, 5], move |g: &Graph, x| {
        Ok(g.batch_norm(x, g.constant(pos(&[3], 18)), g.constant(c(&[3], 19)), None, 1e-5)?.0)
    });
    prim!("batch_norm gamma", [3], move |g: &Graph, w| {
        Ok(g.batch_norm(g.constant(c(&[4, 3, 5], 20)), w, g.constant(c(&[3], 19)), None, 1e-5)?.0)
    });
    prim!("batch_norm eval", [4, 3, 5], move |g: &Graph, x| {
        let (m, s) = (c(&[3], 21), pos(&[3], 22));
        Ok(g.batch_norm(x, g.constant(pos(&[3], 18)), g.constant(c(&[3], 19)), Some((&m, &s)), 1e-5)?.0)
    });
    prim!("layer_norm input", [2, 3, 6], move |g: &Graph, x| {
        g.layer_norm(x, g.constant(pos(&[6], 23)), g.constant(c(&[6], 24)), 1e-5)
    });
    prim!("layer_norm beta", [6], move |g: &Graph, b| {
        g.layer_norm(g.constant(c(&[2, 3, 6], 25)), g.constant(pos(&[6], 23)), b, 1e-5)
    });
    prim!("focal loss", [4, 3], move |g: &Graph, z| {
        let y = Tensor::new(vec![4, 3], (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        focal_loss(g, z, &y, FocalLossParams::default())
    });
    prim!("weighted bce", [4, 3], move |g: &Graph, z| {
        let y = Tensor::new(vec![4, 3], (0..12).map(|i| (i % 2) as f64).collect()).unwrap();
        weighted_bce(g, z, &y, &[0.5, 1.0, 2.0])
    });
    v
}

/// Train-mode dropout is stochastic, so instead of finite differences its
/// gradient must equal the per-element scale applied in the forward pass.
fn dropout_gradient_error() -> Result<f64> {
    let x = Tensor::new(vec![4, 6], random_tensor(&[4, 6], 41).data().iter().map(|v| v + 2.0).collect())?;
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let y = g.dropout(xv, 0.3, true, &mut substream(5, "acceptance-dropout", 0))?;
    let grads = g.backward(probe(&g, y)?)?;
    let w = random_tensor(&[4, 6], 99);
    let dx = grads.wrt(xv).expect("leaf gradient");
    let yv = g.value(y);
    Ok((0..x.len())
        .map(|i| (dx.data()[i] - w.data()[i] * yv.data()[i] / x.data()[i]).abs())
        .fold(0.0, f64::max))
}

fn criterion_gradients() -> Outcome {
    let opts = GradcheckOptions::default();
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    let prims = primitives();
    for (name, shape, f) in &prims {
        let x = random_tensor(shape, 31);
        let r = gradcheck(|g, x| probe(g, f(g, x)?), &x, opts).map_err(|e| format!("{name}: {e}"))?;
        let e = r.max_rel_error();
        if e >= 1e-4 {
            failures.push(format!("{name} ({e:.2e})"));
        }
        if e > worst.0 {
            worst = (e, name.to_string());
        }
    }
    let drop_err = dropout_gradient_error().map_err(|e| format!("dropout: {e}"))?;
    if drop_err > 1e-12 {
        failures.push(format!("dropout ({drop_err:.2e})"));
    }
    for arch in Architecture::ALL {
        let mut m = build(&ModelSpec::tiny(arch, Task::MultiLabel { classes: 2 }), 21).map_err(|e| e.to_string())?;
        let x = random_tensor(&[3, 12, m.min_length().max(96)], 4);
        let mut store = std::mem::take(&mut m.store);
        let opts = GradcheckOptions {
            max_elements: 4,
            seed: 1,
            ..Default::default()
        };
        let (r, grads) = gradcheck_params(
            |g, store| {
                let xv = g.constant(x.clone());
                let y = m.forward_with(store, g, xv, true, &mut substream(0, "gradcheck", 0))?;
                Ok(g.sum(g.square(g.add_scalar(y, -0.3))))
            },
            &mut store,
            opts,
        )
        .map_err(|e| format!("{arch}: {e}"))?;
        let e = r.max_rel_error();
        if e >= 1e-4 {
            failures.push(format!("{arch} ({e:.2e})"));
        }
        if let Some((n, _)) = grads.iter().find(|(_, g)| g.data().iter().all(|&v| v == 0.0)) {
            failures.push(format!("{arch}: {n} has zero gradient"));
        }
        if e > worst.0 {
            worst = (e, arch.to_string());
        }
    }
    ok_or(
        failures.is_empty(),
        format!(
            "{} primitives + dropout + 9 architectures, max rel error {:.2e} ({}), dropout grad error {drop_err:.1e}{}",
            prims.len(),
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Squared magnitude of the prewarped analog prototype.
fn analytic_power(f: f64, order: i32, lo: f64, hi: f64, fs: f64) -> f64 {
    let warp = |x: f64| 2.0 * fs * (std::f64::consts::PI * x / fs).tan();
    let (w, w1, w2) = (warp(f), warp(lo), warp(hi));
    let q = (w * w - w1 * w2) / ((w2 - w1) * w);
    1.0 / (1.0 + q.powi(2 * order))
}

fn fit_amplitude(y: &[f64], f: f64, fs: f64, offset: usize) -> f64 {
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let (s, c) = (2.0 * std::f64::consts::PI * f * (i + offset) as f64 / fs).sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    ((ys * cc - yc * sc) / det).hypot((yc * ss - ys * sc) / det)
}

fn criterion_filter() -> Outcome {
    let fs = 500.0;
    let sos = Sos::butterworth_bandpass(2, 1.0, 45.0, fs).map_err(|e| e.to_string())?;
    let n = 60_000;
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for f in [0.5, 1.0, 10.0, 45.0, 60.0, 100.0] {
        let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect();
        let y = sos.filtfilt(&x);
        let measured = 20.0 * fit_amplitude(&y[n / 4..3 * n / 4], f, fs, n / 4).log10();
        // forward-backward application squares the magnitude
        let expected = 20.0 * analytic_power(f, 2, 1.0, 45.0, fs).log10();
        worst = worst.max((measured - expected).abs());
        lines.push(format!("{f}Hz {measured:.2}dB"));
    }
    let dc = sos.filtfilt(&vec![1.0; n]);
    let dc_gain = dc[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ok_or(
        worst < 0.5 && dc_gain < 1e-3,
        format!("max deviation {worst:.3} dB [{}], DC gain {dc_gain:.1e}", lines.join(", ")),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_segments() -> Outcome {
    let (m, l, bins, draws) = (5000usize, 2048usize, 32usize, 10_000usize);
    let span = m - l + 1;
    let mut rng = substream(2024, "acceptance-segments", 0);
    let mut counts = vec![0f64; bins];
    for _ in 0..draws {
        let s = sample_segment(m, l, &mut rng).map_err(|e| e.to_string())?.start;
        if s > m - l {
            return Err(format!("start {s} exceeds {}", m - l));
        }
        counts[s * bins / span] += 1.0;
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let lo = (b * span).div_ceil(bins);
            let hi = ((b + 1) * span).div_ceil(bins);
            let e = draws as f64 * (hi - lo) as f64 / span as f64;
            (counts[b] - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    ok_or(p > 0.01, format!("all starts in [0, {}], chi2 {chi2:.2}, p {p:.3}", m - l))
}

// ---------------------------------------------------------------- 4

/// Brute-force reference: pairwise ranks, per-class counting, macro means.
fn oracle(scores: &[f64], truth: &[bool], n: usize, k: usize, threshold: f64) -> [Option<f64>; 8] {
    let div = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
    let mut sums = [0.0f64; 6];
    let (mut ap_sum, mut ap_n, mut auc_sum, mut auc_n) = (0.0, 0, 0.0, 0);
    for c in 0..k {
        let s = |i: usize| scores[i * k + c];
        let t = |i: usize| truth[i * k + c];
        let (mut tp, mut fp, mut tn, mut fnn) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            match (s(i) >= threshold, t(i)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fnn += 1.0,
            }
        }
        let sens = div(tp, tp + fnn);
        let spec = div(tn, tn + fp);
        let vals = [div(tp + tn, n as f64), div(2.0 * tp, 2.0 * tp + fp + fnn), (sens * spec).sqrt(), sens, spec, div(tp, tp + fp)];
        for (a, v) in sums.iter_mut().zip(vals) {
            *a += v;
        }
        // j is ranked at or above i: higher score, or equal score and not later in input
        let above = |j: usize, i: usize| s(j) > s(i) || (s(j) == s(i) && j <= i);
        let pos: Vec<usize> = (0..n).filter(|&i| t(i)).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| !t(i)).collect();
        if !pos.is_empty() {
            let ap: f64 = pos
                .iter()
                .map(|&i| {
                    let rank = (0..n).filter(|&j| above(j, i)).count() as f64;
                    let hits = pos.iter().filter(|&&j| above(j, i)).count() as f64;
                    hits / rank
                })
                .sum::<f64>()
                / pos.len() as f64;
            ap_sum += ap;
            ap_n += 1;
        }
        if !pos.is_empty() && !neg.is_empty() {
            let correct = pos.iter().flat_map(|&p| neg.iter().map(move |&q| (p, q))).filter(|&(p, q)| above(p, q)).count();
            auc_sum += correct as f64 / (pos.len() * neg.len()) as f64;
            auc_n += 1;
        }
    }
    let kf = k as f64;
    [
        Some(sums[0] / kf),
        Some(sums[1] / kf),
        (ap_n > 0).then(|| ap_sum / ap_n as f64),
        Some(sums[2] / kf),
        (auc_n > 0).then(|| auc_sum / auc_n as f64),
        Some(sums[3] / kf),
        Some(sums[4] / kf),
        Some(sums[5] / kf),
    ]
}

const METRICS: [&str; 8] = ["accuracy", "f1", "map", "gmean", "auc", "sensitivity", "specificity", "ppv"];

fn compare(scores: &[f64], truth: &[bool], n: usize, k: usize, tol: f64) -> std::result::Result<(), String> {
    let task = if k == 1 { Task::Binary } else { Task::MultiLabel { classes: k } };
    let st = Tensor::new(vec![n, k], scores.to_vec()).unwrap();
    let tt = Tensor::new(vec![n, k], truth.iter().map(|&t| t as u8 as f64).collect()).unwrap();
    let r = compute_metrics(&st, &tt, task, 0.5, &[]).map_err(|e| e.to_string())?;
    let got = [Some(r.accuracy), Some(r.f1), r.map, Some(r.gmean), r.auc, Some(r.sensitivity), Some(r.specificity), Some(r.ppv)];
    let want = oracle(scores, truth, n, k, 0.5);
    for ((name, g), w) in METRICS.iter().zip(got).zip(want) {
        let agree = match (g, w) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= tol,
            _ => false,
        };
        if !agree {
            return Err(format!("{name}: got {g:?}, oracle {w:?} for scores {scores:?} truth {truth:?}"));
        }
    }
    Ok(())
}

fn criterion_metrics() -> Outcome {
    let mut exhaustive = 0usize;
    for n in 1..=4 {
        for k in 1..=3 {
            let cells = n * k;
            let mut scores = vec![0.0; cells];
            let mut truth = vec![false; cells];
            for bits in 0u64..(1 << (2 * cells)) {
                for i in 0..cells {
                    scores[i] = ((bits >> i) & 1) as f64;
                    truth[i] = (bits >> (cells + i)) & 1 == 1;
                }
                compare(&scores, &truth, n, k, 1e-12)?;
                exhaustive += 1;
            }
        }
    }
    let mut rng = substream(77, "acceptance-metrics", 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=40);
        let k = rng.random_range(1..=5);
        // coarse grids produce ties
        let grid = [0.0, 10.0, 100.0][rng.random_range(0..3)];
        let scores: Vec<f64> = (0..n * k)
            .map(|_| {
                let u: f64 = rng.random();
                if grid > 0.0 { (u * grid).round() / grid } else { u }
            })
            .collect();
        let rate: f64 = rng.random_range(0.05..0.95);
        let truth: Vec<bool> = (0..n * k).map(|_| rng.random_bool(rate)).collect();
        compare(&scores, &truth, n, k, 1e-12)?;
    }
    Ok(format!("{exhaustive} exhaustive binary matrices up to 4x3 and 1000 random score matrices agree on all 8 metrics"))
}

// ---------------------------------------------------------------- 5

fn criterion_focal() -> Outcome {
    let bce = |z: f64, y: f64| {
        let p = 1.0 / (1.0 + (-z).exp());
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };
    let half = FocalLossParams { gamma: 0.0, alpha: 0.5 };
    let mut worst: f64 = 0.0;
    for i in 0..=80 {
        let z = -8.0 + 0.2 * i as f64;
        for y in [0.0, 1.0] {
            worst = worst.max((focal_term(z, y, half).0 - 0.5 * bce(z, y)).abs());
        }
    }
    let g = Graph::new();
    let z = g.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
    let l = focal_loss(&g, z, &Tensor::new(vec![1, 1], vec![1.0]).unwrap(), FocalLossParams { gamma: 2.0, alpha: 0.7 })
        .map_err(|e| e.to_string())?;
    let worked = g.value(l).item();
    let target = 0.7 * 0.25 * std::f64::consts::LN_2;
    ok_or(
        worst < 1e-9 && (worked - target).abs() < 1e-6 && (worked - 0.121301).abs() < 1e-6,
        format!("gamma=0, alpha=0.5 vs BCE/2 max diff {worst:.1e}; worked value {worked:.6} (target {target:.6})"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_learnability() -> Outcome {
    let (schema, raw) = generate_synthetic_dataset(&SyntheticSpec::binary(32, 32, 1)).map_err(|e| e.to_string())?;
    let pre = PreprocessConfig::default();
    let records = prepare_records(&raw, &pre).map_err(|e| e.to_string())?;
    let names = schema.classes;
    let idx: Vec<usize> = (0..records.len()).collect();
    let mut lines = Vec::new();
    let mut failed = false;
    for arch in Architecture::ALL {
        let t0 = Instant::now();
        let mut m = build(&ModelSpec::new(arch, Task::Binary), 3).map_err(|e| e.to_string())?;
        let settings = TrainSettings {
            pre,
            augment: AugmentConfig::disabled(),
            optim: OptimizerConfig {
                lr: OptimizerConfig::reference_lr(arch),
                epochs: 200,
                batch_size: 16,
                patience: None,
                ..Default::default()
            },
            threshold: 0.5,
            seed: 9,
        };
        let loss = Loss::resolve(&LossConfig::Bce, &[], &names).map_err(|e| e.to_string())?;
        let data = TrainData {
            records: &records,
            train: &idx,
            val: &[],
        };
        let mut reached = None;
        let mut last = 0.0;
        train_with(&mut m, data, &loss, &settings, &names, |e, m| {
            last = evaluate(m, &records, &idx, &pre, 64, 0.5, &names)?.accuracy;
            if last >= 0.95 {
                reached = Some(e.epoch);
                return Ok(Control::Stop);
            }
            Ok(Control::Continue)
        })
        .map_err(|e| format!("{arch}: {e}"))?;
        let took = t0.elapsed();
        let good = reached.is_some() && took < Duration::from_secs(15 * 60);
        failed |= !good;
        lines.push(match reached {
            Some(ep) => format!("{arch} {ep} ep/{:.0}s", took.as_secs_f64()),
            None => format!("{arch} stuck at {last:.2} after 200 ep"),
        });
    }
    ok_or(!failed, format!("full size, 95% train accuracy: {}", lines.join(", ")))
}

// ---------------------------------------------------------------- 7

fn transfer_seed(seed: u64) -> Result<[f64; 3]> {
    let pre = PreprocessConfig::default();
    let mut hyper = HyperParams::tiny();
    hyper.width = 4;
    hyper.hidden = 8;
    let settings = |epochs: usize| TrainSettings {
        pre,
        augment: AugmentConfig::disabled(),
        optim: OptimizerConfig {
            lr: 1e-3,
            epochs,
            batch_size: 32,
            patience: None,
            ..Default::default()
        },
        threshold: 0.5,
        seed,
    };
    // source task: five-class multi-label synthetic pretraining
    let src_task = Task::MultiLabel { classes: 5 };
    let src_spec = SyntheticSpec::balanced(src_task, 400, 1000 + seed);
    let (ss, src) = generate_synthetic_dataset(&src_spec)?;
    let src = prepare_records(&src, &pre)?;
    let spec = ModelSpec {
        architecture: Architecture::CRNN_GRU,
        head: HeadSpec { task: src_task },
        hyper,
    };
    let mut pretrained = build(&spec, seed)?;
    let all: Vec<usize> = (0..src.len()).collect();
    let src_loss = Loss::resolve(&LossConfig::default(), &[], &ss.classes)?;
    train(&mut pretrained, TrainData { records: &src, train: &all, val: &[] }, &src_loss, &settings(3), &ss.classes)?;
    let ckpt = Checkpoint::from_model(&pretrained, Provenance::none());

    // target task: weaker signature on other frequencies, 222/602 train and 39/64 test
    let target = |pos, neg, s| {
        let mut t = SyntheticSpec::binary(pos, neg, s);
        t.strength = 0.2;
        t.noise = 0.1;
        t.signature_offset = 2;
        t
    };
    let (ts, mut records) = generate_synthetic_dataset(&target(222, 602, 2000 + seed))?;
    let (_, test) = generate_synthetic_dataset(&target(39, 64, 3000 + seed))?;
    let n_train = records.len();
    records.extend(test);
    let records = prepare_records(&records, &pre)?;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..records.len()).collect();
    let loss = Loss::resolve(&LossConfig::default(), &[], &ts.classes)?;
    let data = TrainData {
        records: &records,
        train: &train_idx,
        val: &[],
    };
    let score = |m: &mut Model| evaluate(m, &records, &test_idx, &pre, 64, 0.5, &ts.classes).map(|r| r.f1);

    let mut scratch = build(&ModelSpec { head: HeadSpec { task: Task::Binary }, ..spec.clone() }, 100 + seed)?;
    train(&mut scratch, data, &loss, &settings(4), &ts.classes)?;
    let mut f1 = [score(&mut scratch)?, 0.0, 0.0];
    for (j, mode) in [FineTuneMode::AllWeights, FineTuneMode::HeadOnly].into_iter().enumerate() {
        let mut m = adapt_head(&ckpt, Task::Binary, 100 + seed)?;
        finetune(&mut m, mode, data, &loss, &settings(4), &ts.classes)?;
        f1[j + 1] = score(&mut m)?;
    }
    Ok(f1)
}

fn criterion_transfer() -> Outcome {
    let mut mean = [0.0; 3];
    for seed in 0..5 {
        let f1 = transfer_seed(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        for (m, v) in mean.iter_mut().zip(f1) {
            *m += v / 5.0;
        }
    }
    let [scratch, all, head] = mean;
    ok_or(
        all > scratch && all >= head,
        format!("mean test F1 over 5 seeds: scratch {scratch:.3}, all weights {all:.3}, head only {head:.3}"),
    )
}

// ---------------------------------------------------------------- 8

fn small_dataset() -> Result<(Vec<String>, Vec<EcgRecord>, PreprocessConfig)> {
    let (schema, raw) = generate_synthetic_dataset(&SyntheticSpec::binary(24, 24, 8))?;
    let pre = PreprocessConfig {
        segment_length: 512,
        normalization: NormalizationMethod::L2,
        ..PreprocessConfig::default()
    };
    Ok((schema.classes, prepare_records(&raw, &pre)?, pre))
}

fn param_bits(m: &Model) -> Vec<u64> {
    m.store.iter().flat_map(|(_, p)| p.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn run_once(finetune_from: Option<&Checkpoint>) -> Result<(History, Vec<u64>)> {
    let (names, records, pre) = small_dataset()?;
    let (val, tr): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|i| i % 4 == 0);
    let settings = TrainSettings {
        pre,
        augment: AugmentConfig::default(),
        optim: OptimizerConfig {
            lr: 1e-3,
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        },
        threshold: 0.5,
        seed: 17,
    };
    let mut spec = ModelSpec::tiny(Architecture::CRNN_GRU, Task::Binary);
    spec.hyper.dropout = Some(0.2);
    let loss = Loss::resolve(&LossConfig::default(), &[], &names)?;
    let data = TrainData {
        records: &records,
        train: &tr,
        val: &val,
    };
    let (h, m) = match finetune_from {
        None => {
            let mut m = build(&spec, 4)?;
            (train(&mut m, data, &loss, &settings, &names)?, m)
        }
        Some(ck) => {
            let mut m = adapt_head(ck, Task::Binary, 5)?;
            (finetune(&mut m, FineTuneMode::AllWeights, data, &loss, &settings, &names)?, m)
        }
    };
    Ok((h, param_bits(&m)))
}

fn criterion_reproducibility() -> Outcome {
    let fail = |e: ecg_core::Error| e.to_string();
    let a = run_once(None).map_err(fail)?;
    let b = run_once(None).map_err(fail)?;
    let src = build(&ModelSpec::tiny(Architecture::CRNN_GRU, Task::MultiLabel { classes: 3 }), 1).map_err(fail)?;
    let ck = Checkpoint::from_model(&src, Provenance::none());
    let c = run_once(Some(&ck)).map_err(fail)?;
    let d = run_once(Some(&ck)).map_err(fail)?;
    ok_or(
        a == b && c == d,
        format!(
            "train: history {} params {}; finetune: history {} params {} (dropout and augmentation on)",
            if a.0 == b.0 { "identical" } else { "differs" },
            if a.1 == b.1 { "bit-identical" } else { "differ" },
            if c.0 == d.0 { "identical" } else { "differs" },
            if c.1 == d.1 { "bit-identical" } else { "differ" },
        ),
    )
}

// ---------------------------------------------------------------- 9

fn tensor_bits(ck: &Checkpoint) -> Vec<(String, Vec<u64>)> {
    ck.parameters.iter().map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

fn criterion_checkpoint() -> Outcome {
    let fail = |e: ecg_core::Error| e.to_string();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut roundtrips = 0;
    for arch in Architecture::ALL {
        let m = build(&ModelSpec::tiny(arch, Task::MultiLabel { classes: 4 }), 12).map_err(fail)?;
        let path = dir.path().join(format!("{arch}.ckpt"));
        let prov = Provenance {
            source: "synthetic:acceptance".into(),
            ..Provenance::none()
        };
        save_checkpoint(&m, &prov, &path).map_err(fail)?;
        let back = load_checkpoint(&path).map_err(fail)?;
        if tensor_bits(&back) != tensor_bits(&Checkpoint::from_model(&m, prov.clone())) || back.provenance != prov {
            return Err(format!("{arch}: save/load is not bitwise exact"));
        }
        let adapted = adapt_head(&back, Task::Binary, 99).map_err(fail)?;
        let after = tensor_bits(&Checkpoint::from_model(&adapted, Provenance::none()));
        for (name, bits) in tensor_bits(&back).into_iter().filter(|(n, _)| !Model::is_head_param(n)) {
            if after.iter().find(|(n, _)| *n == name).map(|(_, b)| b) != Some(&bits) {
                return Err(format!("{arch}: adapt_head changed backbone tensor {name}"));
            }
        }
        roundtrips += 1;
    }

    let (names, records, pre) = small_dataset().map_err(fail)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    let src = build(&ModelSpec::tiny(Architecture::ResNet18_1D, Task::MultiLabel { classes: 3 }), 2).map_err(fail)?;
    let ck = Checkpoint::from_model(&src, Provenance::none());
    let mut m = adapt_head(&ck, Task::Binary, 3).map_err(fail)?;
    let before = tensor_bits(&Checkpoint::from_model(&m, Provenance::none()));
    let settings = TrainSettings {
        pre,
        augment: AugmentConfig::default(),
        optim: OptimizerConfig {
            lr: 1e-2,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        },
        threshold: 0.5,
        seed: 1,
    };
    let loss = Loss::resolve(&LossConfig::default(), &[], &names).map_err(fail)?;
    let data = TrainData {
        records: &records,
        train: &idx,
        val: &[],
    };
    finetune(&mut m, FineTuneMode::HeadOnly, data, &loss, &settings, &names).map_err(fail)?;
    let after = tensor_bits(&Checkpoint::from_model(&m, Provenance::none()));
    let changed: Vec<String> = before.iter().zip(&after).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.clone()).collect();
    let head: Vec<String> = before.iter().map(|(n, _)| n.clone()).filter(|n| Model::is_head_param(n)).collect();
    ok_or(
        changed == head,
        format!("{roundtrips} architectures round-trip bitwise with backbone preserved by adapt_head; HeadOnly changed {changed:?}"),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_ptbxl() -> Option<Outcome> {
    let path = std::env::var_os("ECG_PTBXL_MANIFEST")?;
    let run = || -> Result<String> {
        let manifest = DatasetManifest::read_csv(std::path::Path::new(&path))?;
        let classes = manifest.entries.iter().flat_map(|e| &e.labels).collect::<std::collections::BTreeSet<_>>().len();
        let schema = LabelSchema::infer(Task::MultiLabel { classes }, &manifest.entries)?;
        let pre = PreprocessConfig {
            normalization: NormalizationMethod::L2,
            ..PreprocessConfig::default()
        };
        let records = prepare_records(&manifest.load_records(&schema, 500.0)?, &pre)?;
        let folds: Vec<Option<u32>> = manifest.entries.iter().map(|e| e.fold).collect();
        let plan = ptbxl_split(&folds)?;
        let mut m = build(&ModelSpec::new(Architecture::CRNN_GRU, schema.task), 0)?;
        let settings = TrainSettings {
            pre,
            augment: AugmentConfig::default(),
            optim: OptimizerConfig {
                lr: 5e-4,
                ..Default::default()
            },
            threshold: 0.5,
            seed: 0,
        };
        let labels: Vec<_> = plan.train.iter().map(|&i| records[i].labels.clone()).collect();
        let loss = Loss::resolve(&LossConfig::default(), &labels, &schema.classes)?;
        let data = TrainData {
            records: &records,
            train: &plan.train,
            val: &plan.val,
        };
        train(&mut m, data, &loss, &settings, &schema.classes)?;
        let f1 = evaluate(&mut m, &records, &plan.test, &pre, 32, 0.5, &schema.classes)?.f1 * 100.0;
        Ok(format!("{f1:.1}"))
    };
    Some(match run() {
        Ok(f1) => {
            let v: f64 = f1.parse().unwrap();
            ok_or((v - 76.1).abs() <= 4.0, format!("CRNN_GRU test macro F1 {f1} (target 76.1 +/- 4)"))
        }
        Err(e) => Err(e.to_string()),
    })
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ECG_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient correctness", criterion_gradients),
        (2, "bandpass filter oracle", criterion_filter),
        (3, "segment start sampling", criterion_segments),
        (4, "metric oracle equivalence", criterion_metrics),
        (5, "focal loss identities", criterion_focal),
        (6, "learnability", criterion_learnability),
        (7, "transfer learning direction", criterion_transfer),
        (8, "reproducibility", criterion_reproducibility),
        (9, "checkpoint and head swap", criterion_checkpoint),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if only.as_ref().is_none_or(|o| o.contains(&10)) {
        match criterion_ptbxl() {
            None => println!("criterion 10 (PTB-XL reference run): SKIP optional; set ECG_PTBXL_MANIFEST to a manifest with PTB-XL folds"),
            Some(Ok(d)) => println!("criterion 10 (PTB-XL reference run): PASS {d}"),
            Some(Err(d)) => {
                failed += 1;
                println!("criterion 10 (PTB-XL reference run): FAIL {d}");
            }
        }
    }
    println!("acceptance: {failed} failed, {:.1}s total", started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

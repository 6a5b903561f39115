use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Task;
use crate::tensor::Tensor;

use super::loss::sigmoid;

/// `num / den`, with the empty case `0 / 0` counted as perfect.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(pred: impl IntoIterator<Item = bool>, truth: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Confusion::default();
        for (p, t) in pred.into_iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn ppv(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn gmean(&self) -> f64 {
        (self.sensitivity() * self.specificity()).sqrt()
    }
}

/// Positions sorted by descending score; equal scores keep input order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mean precision at the rank of each positive. `None` without positives.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Fraction of positive/negative pairs ranked correctly. `None` unless both occur.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut seen_pos = 0usize;
    let mut correct = 0usize;
    for &i in &ranking(scores) {
        if truth[i] {
            seen_pos += 1;
        } else {
            correct += seen_pos;
        }
    }
    Some(correct as f64 / (positives * negatives) as f64)
}

/// ROC curve points `(fpr, tpr)` from the ranking, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], truth: &[bool]) -> Vec<(f64, f64)> {
    let positives = truth.iter().filter(|&&t| t).count().max(1) as f64;
    let negatives = truth.iter().filter(|&&t| !t).count().max(1) as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut out = vec![(0.0, 0.0)];
    for &i in &ranking(scores) {
        if truth[i] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        out.push((fp / negatives, tp / positives));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub gmean: f64,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
}

/// Macro-averaged metrics with the per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when no class has a positive example.
    pub map: Option<f64>,
    pub gmean: f64,
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes left out of the MAP or AUC average.
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// `(name, value)` for the eight headline metrics; undefined ones are skipped.
    pub fn headline(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("accuracy", self.accuracy), ("f1", self.f1)];
        if let Some(m) = self.map {
            v.push(("map", m));
        }
        v.push(("gmean", self.gmean));
        if let Some(a) = self.auc {
            v.push(("auc", a));
        }
        v.extend([("sensitivity", self.sensitivity), ("specificity", self.specificity), ("ppv", self.ppv)]);
        v
    }
}

/// Converts logits to scores: softmax for multi-class, sigmoid otherwise.
pub fn scores_from_logits(logits: &Tensor, task: Task) -> Tensor {
    let k = *logits.shape().last().unwrap_or(&1);
    let data = match task {
        Task::MultiClass { .. } => logits
            .data()
            .chunks(k)
            .flat_map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(move |v| v / s)
            })
            .collect(),
        _ => logits.data().iter().map(|&z| sigmoid(z)).collect(),
    };
    Tensor::new(logits.shape().to_vec(), data).expect("same shape")
}

/// Hard decisions: argmax (first on ties) for multi-class, `score >= threshold` otherwise.
pub fn decisions(scores: &Tensor, task: Task, threshold: f64) -> Vec<bool> {
    let k = *scores.shape().last().unwrap_or(&1);
    match task {
        Task::MultiClass { .. } => scores
            .data()
            .chunks(k)
            .flat_map(|row| {
                let best = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                (0..k).map(move |c| c == best)
            })
            .collect(),
        _ => scores.data().iter().map(|&s| s >= threshold).collect(),
    }
}

/// Metrics of `scores: [N, k]` against 0/1 `targets: [N, k]`.
pub fn compute_metrics(scores: &Tensor, targets: &Tensor, task: Task, threshold: f64, class_names: &[String]) -> Result<MetricsReport> {
    let k = task.classes();
    if scores.shape() != targets.shape() || scores.shape().len() != 2 || scores.shape()[1] != k {
        return Err(Error::shape(
            "metrics",
            format!("scores {:?} and targets {:?} must both be [N, {k}]", scores.shape(), targets.shape()),
        ));
    }
    if scores.shape()[0] == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    let n = scores.shape()[0];
    let pred = decisions(scores, task, threshold);
    let truth: Vec<bool> = targets.data().iter().map(|&v| v > 0.5).collect();
    let column = |v: &[bool], c: usize| -> Vec<bool> { (0..n).map(|i| v[i * k + c]).collect() };
    let mut per_class = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    for c in 0..k {
        let t = column(&truth, c);
        let p = column(&pred, c);
        let s: Vec<f64> = (0..n).map(|i| scores.data()[i * k + c]).collect();
        let confusion = Confusion::from_pairs(p, t.iter().copied());
        let ap = average_precision(&s, &t);
        let auc = roc_auc(&s, &t);
        let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class {c}"));
        if ap.is_none() {
            warnings.push(format!("{name}: no positive examples; excluded from MAP and AUC"));
        } else if auc.is_none() {
            warnings.push(format!("{name}: no negative examples; excluded from AUC"));
        }
        per_class.push(ClassMetrics {
            confusion,
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            sensitivity: confusion.sensitivity(),
            specificity: confusion.specificity(),
            ppv: confusion.ppv(),
            gmean: confusion.gmean(),
            ap,
            auc,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let mean_defined = |f: fn(&ClassMetrics) -> Option<f64>| {
        let v: Vec<f64> = per_class.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(MetricsReport {
        accuracy: mean(|c| c.accuracy),
        f1: mean(|c| c.f1),
        map: mean_defined(|c| c.ap),
        gmean: mean(|c| c.gmean),
        auc: mean_defined(|c| c.auc),
        sensitivity: mean(|c| c.sensitivity),
        specificity: mean(|c| c.specificity),
        ppv: mean(|c| c.ppv),
        per_class,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmean_worked_example() {
        let c = Confusion { tp: 8, fn_: 2, tn: 9, fp: 1 };
        assert!((c.sensitivity() - 0.8).abs() < 1e-15);
        assert!((c.specificity() - 0.9).abs() < 1e-15);
        assert!((c.gmean() - 0.72f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ap_worked_example() {
        let truth = [true, false, true, true, false, false];
        let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let ap = average_precision(&scores, &truth).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0).abs() < 1e-15);
        assert!((ap - 0.8056).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let s = Tensor::new(vec![4, 2], t.data().iter().map(|v| 0.1 + 0.8 * v).collect()).unwrap();
        let r = compute_metrics(&s, &t, Task::MultiLabel { classes: 2 }, 0.5, &[]).unwrap();
        for (name, v) in r.headline() {
            assert_eq!(v, 1.0, "{name}");
        }
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn class_without_positives_is_excluded_from_ranking_metrics() {
        let t = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let s = Tensor::new(vec![3, 2], vec![0.9, 0.2, 0.1, 0.7, 0.3, 0.1]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = compute_metrics(&s, &t, Task::MultiLabel { classes: 2 }, 0.5, &names).unwrap();
        assert_eq!(r.per_class[1].ap, None);
        assert_eq!(r.map, r.per_class[0].ap);
        assert_eq!(r.auc, Some(1.0));
        assert!(r.warnings[0].starts_with("b:"));
    }

    #[test]
    fn multiclass_uses_argmax() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = Tensor::new(vec![2, 3], vec![0.2, 0.45, 0.35, 0.4, 0.3, 0.3]).unwrap();
        let r = compute_metrics(&s, &t, Task::MultiClass { classes: 3 }, 0.5, &[]).unwrap();
        assert_eq!(r.per_class[1].confusion.tp, 1);
        assert_eq!(r.per_class[2].confusion.fn_, 1);
        assert_eq!(r.per_class[0].confusion.fp, 1);
    }

    #[test]
    fn softmax_scores_sum_to_one() {
        let z = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -500.0, 0.0, 500.0]).unwrap();
        let s = scores_from_logits(&z, Task::MultiClass { classes: 3 });
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

//! Fold-based split protocols.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, Task};
use crate::rng;

/// Record indices per partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Fold `val_fold` validates, `test_fold` tests, every other fold trains.
    pub fn from_folds(folds: &[Option<u32>], val_fold: u32, test_fold: u32) -> Result<Self> {
        if val_fold == test_fold {
            return Err(Error::invalid("validation and test folds must differ"));
        }
        let mut plan = SplitPlan::default();
        for (i, f) in folds.iter().enumerate() {
            match f {
                None => return Err(Error::invalid(format!("record {i} has no fold id"))),
                Some(f) if *f == val_fold => plan.val.push(i),
                Some(f) if *f == test_fold => plan.test.push(i),
                Some(_) => plan.train.push(i),
            }
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Folds 1-8 train, 9 validation, 10 test.
pub fn ptbxl_split(folds: &[Option<u32>]) -> Result<SplitPlan> {
    if let Some(f) = folds.iter().flatten().find(|f| !(1..=10).contains(*f)) {
        return Err(Error::invalid(format!("fold id {f} outside 1..=10")));
    }
    SplitPlan::from_folds(folds, 9, 10)
}

/// Positives per class.
pub fn class_counts(labels: &[LabelVector]) -> Vec<usize> {
    let k = labels.first().map(|l| l.values().len()).unwrap_or(0);
    let mut counts = vec![0; k];
    for l in labels {
        for (c, &v) in counts.iter_mut().zip(l.values()) {
            *c += v as usize;
        }
    }
    counts
}

/// Assigns fold ids `1..=k` so every fold holds at least one positive of
/// every class and per-stratum fold sizes differ by at most one.
///
/// Records are stratified by their rarest active class (binary tasks also
/// stratify the negatives), strata are dealt out rarest first, and each record
/// goes to the fold holding the fewest of its stratum, then the fewest records.
pub fn stratified_kfold(labels: &[LabelVector], class_names: &[String], k: usize, seed: u64) -> Result<Vec<u32>> {
    if k < 2 {
        return Err(Error::invalid("stratified k-fold needs k >= 2"));
    }
    let counts = class_counts(labels);
    for (c, &n) in counts.iter().enumerate() {
        if n < k {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            return Err(Error::invalid(format!("class `{name}` has {n} positive example(s), fewer than {k} folds")));
        }
    }
    let negative_stratum = counts.len();
    let stratum = |l: &LabelVector| -> usize {
        let active = (0..counts.len()).filter(|&c| l.is_active(c));
        match active.min_by_key(|&c| (counts[c], c)) {
            Some(c) => c,
            None => negative_stratum,
        }
    };
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); counts.len() + 1];
    for (i, l) in labels.iter().enumerate() {
        strata[stratum(l)].push(i);
    }
    let mut order: Vec<usize> = (0..strata.len()).filter(|&s| !strata[s].is_empty()).collect();
    order.sort_by_key(|&s| (strata[s].len(), s));

    let mut fold_of = vec![0usize; labels.len()];
    let mut size = vec![0usize; k];
    for s in order {
        let mut members = strata[s].clone();
        members.shuffle(&mut rng::substream(seed, "stratified_kfold", s as u64));
        let mut in_fold = vec![0usize; k];
        for i in members {
            let f = (0..k).min_by_key(|&f| (in_fold[f], size[f], f)).unwrap();
            in_fold[f] += 1;
            size[f] += 1;
            fold_of[i] = f;
        }
    }

    // multi-label records can leave a class missing from a fold; move one over
    for c in 0..counts.len() {
        loop {
            let per_fold: Vec<Vec<usize>> = (0..k)
                .map(|f| (0..labels.len()).filter(|&i| fold_of[i] == f && labels[i].is_active(c)).collect())
                .collect();
            let Some(empty) = (0..k).find(|&f| per_fold[f].is_empty()) else { break };
            let donor = (0..k).max_by_key(|&f| (per_fold[f].len(), std::cmp::Reverse(f))).unwrap();
            if per_fold[donor].len() < 2 {
                return Err(Error::Precondition(format!("cannot place class {c} in every fold")));
            }
            let moved = *per_fold[donor].last().unwrap();
            fold_of[moved] = empty;
        }
    }
    Ok(fold_of.into_iter().map(|f| f as u32 + 1).collect())
}

/// Task-aware check that a split has the expected task on every record.
pub fn check_task(labels: &[LabelVector], task: Task) -> Result<()> {
    match labels.iter().find(|l| l.task() != task) {
        Some(l) => Err(Error::invalid(format!("label task {:?} differs from {task:?}", l.task()))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(pos: usize, neg: usize) -> Vec<LabelVector> {
        (0..pos + neg).map(|i| LabelVector::new(Task::Binary, vec![(i < pos) as u8]).unwrap()).collect()
    }

    #[test]
    fn ptbxl_protocol() {
        let folds: Vec<Option<u32>> = (1..=10).map(Some).collect();
        let plan = ptbxl_split(&folds).unwrap();
        assert_eq!(plan.train, (0..8).collect::<Vec<_>>());
        assert_eq!(plan.val, vec![8]);
        assert_eq!(plan.test, vec![9]);
        assert!(ptbxl_split(&[Some(1), None]).is_err());
    }

    #[test]
    fn balanced_two_class_folds() {
        let t = Task::MultiClass { classes: 2 };
        let labels: Vec<LabelVector> = (0..100).map(|i| LabelVector::from_active(t, &[i % 2]).unwrap()).collect();
        let folds = stratified_kfold(&labels, &["a".into(), "b".into()], 10, 7).unwrap();
        for f in 1..=10 {
            for c in 0..2 {
                let n = (0..100).filter(|&i| folds[i] == f && labels[i].is_active(c)).count();
                assert_eq!(n, 5);
            }
        }
        assert_eq!(folds, stratified_kfold(&labels, &["a".into(), "b".into()], 10, 7).unwrap());
    }

    #[test]
    fn too_few_positives_names_class() {
        let err = stratified_kfold(&binary(9, 50), &["PE".into()], 10, 0).unwrap_err();
        assert!(err.to_string().contains("`PE`"));
    }
}

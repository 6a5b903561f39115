use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction task and its output count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    MultiLabel { classes: usize },
    MultiClass { classes: usize },
    Binary,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::MultiLabel { classes } | Task::MultiClass { classes } => classes,
            Task::Binary => 1,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Task::MultiLabel { classes: 0 } => Err(Error::invalid("multi-label task needs at least one class")),
            Task::MultiClass { classes } if classes < 2 => Err(Error::invalid("multi-class task needs at least two classes")),
            _ => Ok(()),
        }
    }
}

/// Ground truth for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    task: Task,
    values: Vec<u8>,
}

impl LabelVector {
    pub fn new(task: Task, values: Vec<u8>) -> Result<Self> {
        task.validate()?;
        if values.len() != task.classes() {
            return Err(Error::invalid(format!("{task:?} expects {} label entries, got {}", task.classes(), values.len())));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!("labels must be 0/1, got {values:?}")));
        }
        if matches!(task, Task::MultiClass { .. }) && values.iter().filter(|&&v| v == 1).count() != 1 {
            return Err(Error::invalid(format!("multi-class label needs exactly one active entry, got {values:?}")));
        }
        Ok(LabelVector { task, values })
    }

    /// Labels from the indices of active classes.
    pub fn from_active(task: Task, active: &[usize]) -> Result<Self> {
        let mut values = vec![0u8; task.classes()];
        for &i in active {
            if i >= values.len() {
                return Err(Error::invalid(format!("class index {i} out of range for {task:?}")));
            }
            values[i] = 1;
        }
        Self::new(task, values)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn is_active(&self, class: usize) -> bool {
        self.values[class] == 1
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

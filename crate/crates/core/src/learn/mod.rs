//! Losses, optimizer, training loop and metrics.

mod loss;
mod metrics;
mod optim;
mod train;

pub use loss::{bce_term, class_weights, focal_loss, focal_term, sigmoid, softplus, weighted_bce, FocalLossParams, Loss, LossConfig};
pub use metrics::{
    average_precision, compute_metrics, decisions, roc_auc, roc_curve, scores_from_logits, ClassMetrics, Confusion, MetricsReport,
};
pub use optim::{Adam, OptimizerConfig, OptimizerKind};
pub use train::{evaluate, predict_scores, train, train_with, Control, EpochRecord, History, TrainData, TrainSettings};

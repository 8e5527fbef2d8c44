//! Loss, gradients, optimization, metrics and the cross-validation harness.

pub mod adam;
pub mod backward;
pub mod cv;
pub mod loss;
pub mod metrics;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{backward, backward_with};
pub use cv::{loso_cv, loso_splits, run_fold, split_for, CvReport, FoldResult, FoldSplit, MetricsFile};
pub use loss::{cross_entropy, cross_entropy_from_logits};
pub use metrics::Metrics;
pub use trainer::{evaluate, history_csv, predict, train, EpochRecord, TrainConfig, TrainOutcome};

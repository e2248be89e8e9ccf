//! Splitting, class balancing, the training loop, metrics and the two end-to-end pipelines.

mod metrics;
mod pipeline;
mod split;
mod train;

pub use metrics::{auroc, compute_metrics, mean_sd, metrics_from_confusion, roc_curve, LatencyStats, MetricsReport, RocCurve};
pub use pipeline::{
    prepare_fold_a, run_fold_a, run_pipeline_a, run_pipeline_b, run_repeat_b, subjects_from_series, summarize,
    volume_set_from_series, AlignMode, FoldOutcome, FoldReport, FoldTrace, PipelineAConfig, PipelineBConfig, PipelineReport,
    Predictions, PreparedFold, RepeatOutcome, RepeatReport, SubjectData, VolumeSet, split_b,
};
pub use split::{bootstrap_balance, loocv_folds, split_grouped, split_random, split_sizes, Fold, Split};
pub use train::{train, TrainReport};

//! Mini-batch training with prediction recording, early stopping and
//! learning-curve analytics.

mod analytics;
mod loop_;
mod paths;

pub use analytics::{
    collapse_for_triangle, convergence_time, ema, ema_scalar, inflection_epoch, inflection_epoch_with_window, project_barycentric,
    write_paths_csv, zigzag_stats, BarycentricPoint, LearningPath, ZigzagStats, TRIANGLE_CORNERS,
};
pub use loop_::{
    evaluate_error, evaluate_loss, logit_grad, train, NoObserver, OptimizerKind, RecordCadence, Recorder, StepInfo, StopMetric, TrainConfig, TrainObserver, TrainOutcome,
    TrainSet,
};
pub use paths::{entk_stability_after_plateau, run_paths, write_zigzag_csv, PathExperiment, PathRecord, PathRun, ZigzagSummary};

pub use crate::akg::LossKind;

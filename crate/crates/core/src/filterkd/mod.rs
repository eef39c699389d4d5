//! Distillation from a temporally filtered teacher: an EMA table of the
//! teacher's predictions is kept while it trains, and the student learns from
//! the table frozen at the teacher's early-stopping point.

mod bounds;
mod experiment;
mod metrics;
mod table;

pub use bounds::{kl_divergence, risk_bound_terms, BoundForm, RiskBounds, RiskInstance};
pub use experiment::{run_filter_kd, write_kd_csv, FilterKdExperiment, KdRow};
pub use metrics::{accuracy, ece, supervision_quality};
pub use table::{train_student, train_teacher, EmaTable, KdConfig, KdMode, TeacherOutcome};

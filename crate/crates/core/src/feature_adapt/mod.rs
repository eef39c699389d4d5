//! Feature adaptation in a two-layer linear model: head probing, full
//! tuning, average initial energy, the closed-form converged backbone under
//! linearized dynamics and the similarity metrics between features before
//! and after tuning.

mod experiment;
mod ntk;
mod opm;

pub use experiment::{adapt_problem, run_tau_sweep, write_sweep_csv, write_tau_csv, AdaptSpec, TauRow};
pub use ntk::{
    ntk_converged, opm_kernel, sweep_grid, sweep_q0, trend_segments, NtkSolution, OpmInstance, OpmSpec, Segment, SweepRow, SweepTable,
    PINV_CONDITION,
};
pub use opm::{
    adapt_metrics, aie, direction_change, full_tune, head_probe, AdaptMetrics, FtConfig, FtOutcome, HeadProbe, HpConfig, OpmState, OpmTask,
};

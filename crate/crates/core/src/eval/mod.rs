//! Measurement: step-indexed accuracy under several selection policies,
//! scalar summaries, confidence-based dynamic exit, the exhaustive
//! best-trajectory upper bound, and per-view discriminativeness probes.

mod exit;
mod metrics;
mod report;
mod traces;
mod upper;
mod views;

pub use exit::{
    calibrate_exit, exit_eval, exit_sweep, ExitOutcome, ExitPolicy, ExitSweepPoint, NEVER_EXIT,
};
pub use metrics::{default_weights, metrics, AccuracyCurve, Metrics};
pub use report::{
    evaluate, write_curve_csv, write_exit_csv, write_metrics_csv, write_upper_bound_csv,
    write_view_matrix_csv, EvalReport,
};
pub use traces::{
    check_compat, run_trace, run_trace_from, sample_rng, step_accuracies, PolicyMode, Trace,
};
pub use upper::{upper_bound, upper_bound_curve, upper_bound_flags};
pub use views::{per_view_analysis, ViewAnalysis};

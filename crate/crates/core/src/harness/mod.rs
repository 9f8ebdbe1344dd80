//! Experiment orchestration: configuration, ground truth, filter runs,
//! metrics, sweeps and report files.

mod config;
mod convergence;
mod genie;
mod report;
mod run;
mod sweep;

pub use config::{ExperimentConfig, FilterConfig, InnerKind, JitterConfig, RunConfig, DEFAULT_PRIOR_BOX};
pub use convergence::{convergence_experiment, log_log_slope, ConvergenceConfig, ConvergencePoint, ConvergenceReport};
pub use genie::genie_ansatz_fit;
pub use report::{
    emit_report, read_json, summarize_reports, timing_path, write_json, ReportFormat, ReportSummary, Timing,
};
pub use run::{
    forecast_model, initial_state_prior, mse_per_dim, repetition_config, run_experiment, run_repetitions,
    IntermediatePoint, MsePoint, ParticleSnapshot, RunReport,
};
pub use sweep::{aggregate, mean_std, sweep, with_axis_value, SweepAxis, SweepPoint, SweepReport, SweepRun};

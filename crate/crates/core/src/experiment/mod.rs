//! Experiment plumbing: config files, metrics and summaries, checkpoints,
//! reference data, training-dynamics diagnostics and parameter sweeps.

mod checkpoint;
mod config;
mod diagnostics;
mod metrics;
mod reference;
mod runner;
mod sweep;

pub use checkpoint::{checkpoint_container, checkpoint_info, load_checkpoint, restore, save_checkpoint, CheckpointInfo};
pub use config::{apply_override, parse_override, ExperimentConfig, ModelConfig, ReferenceConfig};
pub use diagnostics::{
    derivative_regression, init_derivatives, loglog_slope, median, regression_csv, regression_grid, sample_variance,
    scalar_mlp, variance_csv, variance_study, RegressionConfig, RegressionResult, RegressionRow, VarianceRow,
};
pub use metrics::{metrics_header, metrics_to_csv, parse_metrics_csv, read_metrics, resum, write_metrics, RunStatus, RunSummary};
pub use reference::{generate_reference, interpolate, load_or_generate, CavityProfiles};
pub use runner::{
    evaluate, evaluate_run, load_reference, resume_experiment, run_experiment, steps_done, Reference, RunOptions,
    RunPaths, CHECKPOINT_DIR, CONFIG_FILE, DIVERGED, FINAL, LATEST, METRICS_FILE, SUMMARY_FILE,
};
pub use sweep::{alpha_arms, gating_arms, grid_cells, run_sweep, sweep_csv, two_arms, SweepCell, SweepRow};

//! Experiment orchestration for kweave: configs, the split protocol,
//! multi-split aggregation and report rendering.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{
    fit_train_weights, run_experiment, run_experiment_on, run_sweep, run_sweep_mean,
};
pub use report::{
    emit_report, emit_report_dir, markdown_table, sweep_tsv, ExperimentReport, ReportFormat,
};

/// A problem with the invocation or configuration rather than with the run.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

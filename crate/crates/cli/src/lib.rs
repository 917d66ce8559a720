//! Experiment runner, file formats and reports for the `simchan` tool.

pub mod config;
pub mod experiment;
pub mod persist;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::run_experiment;
pub use report::{emit_report, MetricsReport};

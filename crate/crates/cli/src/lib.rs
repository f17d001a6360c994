//! Experiment orchestration for VAMPnet models: configuration, the multi-run
//! protocol, run statistics and report files.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;
pub mod stats;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentError, RunSummary};
pub use stats::{aggregate_runs, Aggregate, StatsError};

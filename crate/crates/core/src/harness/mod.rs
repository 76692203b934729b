//! Experiment configuration, orchestration and rate regression.

pub mod config;
pub mod fit;
pub mod runner;
pub mod seed;

pub use config::{ExperimentConfig, ExperimentKind};
pub use fit::{fit_exponential, fit_rate, RateFit};
pub use runner::{execute, fit_csv, run_experiment, Check, Outcome, RunOptions, RunReport, Table};
pub use seed::seed_stream;

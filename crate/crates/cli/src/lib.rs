//! Experiment runner: versioned TOML configs, seeded instances, parallel
//! sweeps and CSV/JSON artifacts with a manifest per run.

pub mod commands;
pub mod config;
pub mod output;
pub mod specs;
pub mod stats;

pub use commands::{run, run_with_jobs, Command, Instance, RunReport};
pub use config::{ConfigError, RunConfig, Validated};

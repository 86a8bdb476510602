//! Library surface of the experiment runner: configuration parsing and the
//! subcommand implementations, kept callable from integration tests.

pub mod config;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig};
pub use runner::RunnerError;

//! Experiment driver for split-learning feature reconstruction: run
//! configuration, the train → attack pipeline, runtime benchmarks and the
//! reproduction suites behind the `vfl-recon` binary.

pub mod bench;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod repro;

pub use config::RunConfig;
pub use error::{CliError, Result};

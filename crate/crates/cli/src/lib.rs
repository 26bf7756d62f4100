//! Configuration parsing and stage orchestration for the `critical-ls` binary.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, RunConfig};
pub use pipeline::{run, Options, RunError, RunOutcome, Subcommand};

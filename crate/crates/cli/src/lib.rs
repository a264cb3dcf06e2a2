//! Command-line driver for consistent cross-view matching: configuration
//! handling, run directories and reports.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{cmd_eval, cmd_generate, cmd_run, RunOutcome};
pub use config::{Input, RunConfig, Stage};
pub use error::{CliError, Result};

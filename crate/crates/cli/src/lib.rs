//! Config-driven experiment harness behind the `ali` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::{Layout, OUTPUT_ROOT_VAR};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

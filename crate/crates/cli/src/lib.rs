//! Command-line front end: configuration, model files and the `fit`,
//! `forecast`, `eval` and `benchmark` commands.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;

pub use artifact::ModelArtifact;
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};

//! Experiment drivers, file emission and the acceptance suite behind the
//! `lgtime` command-line tool.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod plot;
pub mod validation;

pub use config::{ExperimentConfig, ModelName};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] lgtime_core::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// `2` for configuration problems, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

use std::fmt::Display;
use std::process::ExitCode;
use thiserror::Error;

/// Invalid input (exit 2) versus failures while doing the work (exit 1).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

pub trait Classify<T> {
    fn invalid(self, context: &str) -> Result<T, CliError>;
    fn failed(self, context: &str) -> Result<T, CliError>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn invalid(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(format!("{context}: {e}")))
    }

    fn failed(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(anyhow::anyhow!("{context}: {e}")))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

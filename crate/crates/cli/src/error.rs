use std::path::PathBuf;

use hjreach::control::ControlError;
use hjreach::decouple::DecoupleError;
use hjreach::io::SnapshotError;
use hjreach::oracle::OracleError;
use hjreach::pde::PdeError;
use hjreach::problem::ProblemError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("resource refusal: {0}")]
    Resource(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Resource(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::MemoryBudget { .. } => CliError::Resource(e.to_string()),
            PdeError::NonFinite { .. } | PdeError::StaticField => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Pde(p) => p.into(),
            ProblemError::Decouple(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DecoupleError> for CliError {
    fn from(e: DecoupleError) -> Self {
        match e {
            DecoupleError::Pde(p) => p.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Pde(p) => p.into(),
            OracleError::TimerTooCoarse(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Decouple(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        CliError::Config(format!("snapshot: {e}"))
    }
}

use std::process::ExitCode;

use gmop::evaljoint::EvalError;
use gmop::model::ModelError;
use gmop::scene::SceneError;
use thiserror::Error;

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DEPENDENCY: u8 = 3;
    pub const VALIDATION: u8 = 4;
    pub const DIVERGENCE: u8 = 5;

    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => Self::IO,
            CliError::Usage(_) => Self::USAGE,
            CliError::Dependency(_) => Self::DEPENDENCY,
            CliError::Validation(_) => Self::VALIDATION,
            CliError::Divergence(_) => Self::DIVERGENCE,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Divergence { .. } => CliError::Divergence(e.to_string()),
            ModelError::MissingArtifact(m) => CliError::Dependency(m),
            ModelError::Io(e) => CliError::Io(e.to_string()),
            ModelError::Untrained | ModelError::Manifest(_) => CliError::Dependency(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Io(e) => CliError::Io(e.to_string()),
            EvalError::Csv(e) => CliError::Io(e.to_string()),
            EvalError::NoScenes => CliError::Usage(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Failure of a command. Usage problems exit with 2, everything else with 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn stage(stage: &'static str, err: impl fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: err.to_string(),
        }
    }

    pub fn io(stage: &'static str, path: &Path, err: impl fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Stage { .. } => 1,
        }
    }
}

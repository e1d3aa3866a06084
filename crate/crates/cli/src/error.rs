use std::path::Path;

use tofflow_core::optim::OptimError;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files.
    #[error("{0}")]
    Input(String),
    /// A check the command performs did not hold.
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<tofflow_core::Error> for CliError {
    fn from(e: tofflow_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Diverged { .. } => CliError::Diverged(e.to_string()),
            OptimError::Core(e) => e.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::path::Path;
use std::process::ExitCode;

use isdm_core::error::Error as CoreError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonConvergence(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::NonConvergence(_) => "non_convergence",
        }
    }

    /// One JSON line on stderr, then the exit code.
    pub fn report(&self) -> ExitCode {
        let record = json!({ "error": { "kind": self.kind(), "code": self.code(), "message": self.to_string() } });
        eprintln!("{record}");
        ExitCode::from(self.code())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Spec(_) | CoreError::InvalidPrior(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

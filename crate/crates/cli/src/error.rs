use std::path::Path;

/// Failure classes of the command line, each with a fixed exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unknown method names, invalid configuration. Exit code 1.
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent inputs and outputs. Exit code 2.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values or degenerate problems. Exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<slmm_core::Error> for CliError {
    fn from(e: slmm_core::Error) -> Self {
        match e {
            slmm_core::Error::NonFinite(_) | slmm_core::Error::Degenerate(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

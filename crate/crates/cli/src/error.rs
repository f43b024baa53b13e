use detdiv_core::Error as CoreError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }

    pub(crate) fn read(path: &Path, err: CoreError) -> Self {
        match err {
            CoreError::Io(e) => CliError::io(path, e),
            other => CliError::from(other).context(path),
        }
    }

    fn context(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{p}: {m}")),
            CliError::Verification(m) => CliError::Verification(format!("{p}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{p}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Config { .. }
            | CoreError::FamilyMismatch(_)
            | CoreError::MalformedHeader(_)
            | CoreError::Truncated(_)
            | CoreError::LabelOutOfRange { .. } => CliError::Config(err.to_string()),
            CoreError::NonFinite { .. } => CliError::Numerical(err.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

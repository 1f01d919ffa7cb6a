use std::io;
use std::path::Path;

/// Failure classes, one per process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// The data or schema cannot be used.
    #[error("{0}")]
    Data(String),
    /// The sampler or the filesystem failed mid-run.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<pdmix::Error> for CliError {
    fn from(e: pdmix::Error) -> Self {
        use pdmix::Error as E;
        match e {
            E::Config(_) | E::Hyper(_) => CliError::Usage(e.to_string()),
            E::Schema(_) | E::Validation(_) | E::NonPositiveLog(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

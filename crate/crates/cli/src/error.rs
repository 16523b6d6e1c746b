use std::path::Path;

use thiserror::Error;

/// Failure of one subcommand. The exit code follows the error class.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] mogen::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        mogen::Error::io(path, e).into()
    }

    pub fn exit_code(&self) -> u8 {
        use mogen::ErrorKind;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }

    pub fn class(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "numerical",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use mogen_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: String },

    #[error("checksum mismatch for {what}")]
    Checksum { what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("endpoint given to a model trained without endpoint conditioning")]
    EndpointUnsupported,

    #[error("model is endpoint-conditioned and needs an endpoint")]
    EndpointRequired,

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Broad failure class, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::EndpointUnsupported | Error::EndpointRequired | Error::Unknown { .. } => {
                ErrorKind::Config
            }
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::Tensor(TensorError::NonFinite { .. } | TensorError::NonFiniteGradient(_)) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

/// Errors produced by ingestion, training and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("id space mismatch: {0}")]
    IdMismatch(String),
    #[error("selection length {got} does not match neighbor count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("neighbor list is empty")]
    EmptyNeighbors,
    #[error("unknown user {0}")]
    UnknownUser(u32),
    #[error("user {0} has interacted with every item, no negative available")]
    NoNegative(u32),
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: &'static str },
    #[error("loss diverged at epoch {epoch} (value {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("loss function is not deterministic ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::NonFiniteGradient { .. } | Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite conformity score {0}")]
    NonFiniteScore(f64),

    #[error("tiebreak {0} is outside [0, 1]")]
    TiebreakOutOfRange(f64),

    #[error("p-value {0} is outside [0, 1]")]
    PValueOutOfRange(f64),

    #[error("at index {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite capital ratio at step {step}")]
    NonFiniteRatio { step: u64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("missing point prediction")]
    MissingPrediction,

    #[error("missing or empty ensemble predictions")]
    MissingEnsemble,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fold streams out of sync: {0}")]
    OutOfSync(String),

    #[error("schedule already raised an alarm and has terminated")]
    Terminated,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at(index: usize, source: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Unsupported(_) | Error::Toml(_) => {
                ErrorKind::Config
            }
            Error::NonFiniteScore(_)
            | Error::TiebreakOutOfRange(_)
            | Error::PValueOutOfRange(_)
            | Error::Empty(_)
            | Error::DimensionMismatch { .. }
            | Error::MissingPrediction
            | Error::MissingEnsemble
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_) => ErrorKind::Data,
            Error::AtIndex { source, .. } => source.kind(),
            Error::NonFiniteRatio { .. }
            | Error::NoRoot(_)
            | Error::OutOfSync(_)
            | Error::Terminated
            | Error::Json(_) => ErrorKind::Runtime,
        }
    }
}

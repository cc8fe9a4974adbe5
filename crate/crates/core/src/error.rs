use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: row {row}, column {col}: cannot parse {cell:?} as a number", file.display())]
    Parse {
        file: PathBuf,
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("degenerate repetition: {0}")]
    DegenerateRepetition(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("unknown subject {0}")]
    UnknownSubject(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate range: all values equal {0}")]
    DegenerateRange(f64),

    #[error("missing artifact {} (run `rehab {producer}` first)", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("nothing to report; missing output of: {}", .0.join(", "))]
    MissingStages(Vec<String>),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Unsupported(_) => ErrorKind::Usage,
            Error::Numerical(_) | Error::Divergence { .. } | Error::DegenerateRange(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.into(),
                source: Box::new(e),
            },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

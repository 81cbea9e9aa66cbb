use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite {term} at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{0}")]
    Usage(String),

    #[error("experiment {id}: {source}")]
    Experiment { id: String, source: Box<Error> },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config { field: field.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Innermost error, looking through experiment wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Self::Experiment { source, .. } => source.root(),
            other => other,
        }
    }
}

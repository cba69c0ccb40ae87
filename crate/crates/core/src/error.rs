use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Backend,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: dataset contains no samples")]
    EmptyDataset { path: PathBuf },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("archive integrity check failed for {path}: expected checksum {expected}, found {found}")]
    Integrity {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("layer {layer} out of range for model `{model_id}` with depth {depth}")]
    LayerOutOfRange {
        model_id: String,
        layer: usize,
        depth: usize,
    },

    #[error("backend error at {endpoint}: [{code}] {message}")]
    Backend {
        endpoint: String,
        code: String,
        message: String,
    },

    #[error("embedding failed for samples {failed:?}: {source}")]
    EmbedSamples {
        failed: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) | Error::LayerOutOfRange { .. } => ErrorCategory::Config,
            Error::Backend { .. } => ErrorCategory::Backend,
            Error::EmbedSamples { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

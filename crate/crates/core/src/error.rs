use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pretraining / evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("clip too short: {samples} samples < window of {window}")]
    ClipTooShort { samples: usize, window: usize },

    #[error("degenerate embeddings: {0}")]
    DegenerateEmbeddings(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Short stable tag used in the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Decode { .. } => "decode",
            Error::ClipTooShort { .. } => "clip_too_short",
            Error::DegenerateEmbeddings(_) => "degenerate_embeddings",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::Config { .. } => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("container format error: {0}")]
    Format(String),

    #[error("bad container magic: expected \"MMFUSE01\", found {0:?}")]
    BadMagic([u8; 8]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("word at {start_s}s starts beyond the audio ({limit_s}s)")]
    OutOfRange { start_s: f64, limit_s: f64 },

    #[error("cannot repair spans: {words} words do not fit into {frames} frames")]
    Unrepairable { words: usize, frames: usize },

    #[error("invalid classifier configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },

    #[error("search failed: {0}")]
    Search(String),

    #[error("parse error in {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }
}

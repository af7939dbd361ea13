use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KrdError>;

#[derive(Debug, Error)]
pub enum KrdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value fell outside the domain of a function (e.g. KL support violation).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("class {class} has no training examples")]
    MissingClass { class: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("config error at {}: key `{key}`: {message}", line.map(|l| format!("line {l}")).unwrap_or_else(|| "command line".into()))]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl KrdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KrdError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KrdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            KrdError::InvalidArgument(_) | KrdError::Config { .. } => 1,
            KrdError::Parse { .. }
            | KrdError::CorruptData(_)
            | KrdError::MissingClass { .. }
            | KrdError::Io { .. }
            | KrdError::Json(_) => 2,
            KrdError::Domain(_)
            | KrdError::Degenerate(_)
            | KrdError::NonFinite { .. }
            | KrdError::Contract(_) => 3,
        }
    }
}

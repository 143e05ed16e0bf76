use std::path::PathBuf;

/// Errors produced by the core crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index out of range in {op}: {index} >= {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed IDX or checkpoint bytes. `offset` is the byte position where
    /// decoding stopped.
    #[error("{what} format error at byte offset {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("non-finite loss {loss}: max |logit| = {logit_max:e}, participation range [{s_min}, {s_max}]")]
    NonFiniteLoss {
        loss: f64,
        logit_max: f64,
        s_min: f64,
        s_max: f64,
    },

    #[error("config error (line {line}): {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid JSON")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

use std::path::PathBuf;

/// Errors raised anywhere in the controller, plant, metrics and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("loop window not warmed up: {have} of 3 sensor readings available")]
    NotWarmedUp { have: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("startup error: {0}")]
    Startup(String),

    #[error("numeric abort at step {step}: {reason}")]
    NumericAbort { step: u64, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericAbort { .. } | Error::NumericDomain(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

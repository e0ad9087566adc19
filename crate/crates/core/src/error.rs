use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value outside the accepted input domain (non-finite pixel, label out of range, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Shapes or dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A hyper-parameter outside its legal range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation invoked out of order or on data that violates its protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Configuration problems (too few identities for a batch, bad config keys, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// NaN or infinity produced during computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

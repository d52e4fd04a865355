use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed input data (CoNLL rows, label strings, embedding files).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Invalid label sequence or tagging-scheme violation.
    #[error("invalid labels: {0}")]
    Labels(String),

    /// Invalid configuration value or unknown configuration key.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid data passed to an operation (empty corpus, length mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// Corrupt, truncated or incompatible model file.
    #[error("model file error: {0}")]
    ModelFile(String),

    /// Training aborted (non-finite loss, invalid state).
    #[error("training error: {0}")]
    Train(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

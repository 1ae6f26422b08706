use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum TrdError {
    #[error("node index {index} out of range for a graph with {len} nodes")]
    Index { index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in layer {layer}: {what}")]
    Numeric { layer: usize, what: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrdError>;

pub(crate) fn domain(msg: impl Into<String>) -> TrdError {
    TrdError::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> TrdError {
    TrdError::Contract(msg.into())
}

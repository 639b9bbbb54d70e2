use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("softmax row {row} has no unmasked entry")]
    FullyMasked { row: usize },

    #[error("{0}: valid mask selects no entries")]
    EmptyMask(&'static str),

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at step {step} (batch: {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<String> },

    #[error("sequence of {len} tokens exceeds max_len {max_len}; segment the document first")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("oracle size cap exceeded: L = {len} > {cap}")]
    OracleCap { len: usize, cap: usize },

    #[error("LoRA adapter already attached to {0}")]
    LoraAttached(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("document `{doc}`: {msg}")]
    Data { doc: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

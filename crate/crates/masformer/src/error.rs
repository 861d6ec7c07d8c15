//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("position ({i}, {j}) out of range for sequence length {n}")]
    PositionOutOfRange { i: usize, j: usize, n: usize },

    #[error("softmax row {row} has no allowed entries")]
    DegenerateRow { row: usize },

    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence length {len} exceeds maximum position {max_pos}")]
    ContextOverflow { len: usize, max_pos: usize },

    #[error("invalid layer plan: {0}")]
    InvalidPlan(String),

    #[error("budget {budget} is infeasible: {reason}")]
    InfeasibleBudget { budget: u64, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}, batch item {item}")]
    NonFiniteLoss { step: usize, item: usize },

    #[error("corpus contains no usable documents")]
    EmptyCorpus,

    #[error("retrieval task is infeasible: {0}")]
    InfeasibleTask(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("corpus format: {0}")]
    CorpusFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

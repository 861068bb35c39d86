use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the retrieval core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("document body is empty: {0}")]
    EmptyBody(String),
    #[error("duplicate document id: {0}")]
    DuplicateDocId(String),
    #[error("cannot hold out {requested} pairs without uncovering documents: {}", .uncovered.join(", "))]
    CoverageImpossible { requested: usize, uncovered: Vec<String> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least {needed} points to fit {needed} codes, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("code {code} out of range for level {level} of size {size}")]
    CodeOutOfRange { level: usize, code: usize, size: usize },
    #[error("learnable identifier collision among documents: {}", .0.join(", "))]
    DocIdCollision(Vec<String>),
    #[error("identifier budget of {budget} tokens exhausted while disambiguating {doc_id}")]
    BudgetExhausted { doc_id: String, budget: usize },
    #[error("predicted distribution at position {position} sums to {sum}")]
    NotNormalized { position: usize, sum: f64 },
    #[error("sequence too long: {len} > {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("training diverged at epoch {epoch}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("unknown query id: {0}")]
    UnknownQuery(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FvError {
    /// A model violates one of its invariants; the message names it.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("not a probability vector: {0}")]
    NotNormalized(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Enumeration or dense-algebra guard exceeded.
    #[error("{what} has size {size}, above the limit {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("no convergence after {iterations} iterations: {context}")]
    NonConvergence { iterations: usize, context: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A bound whose hypotheses do not hold for the model at hand.
    #[error("criterion not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, FvError>;

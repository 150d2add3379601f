//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation. `field` names the offender.
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// An operation was called outside its mathematical domain.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// Exhaustive enumeration would exceed the configured budget.
    #[error("enumeration budget exceeded: {required} evaluations required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    /// No point of the search grid satisfies the constraints.
    #[error("no feasible grid point satisfies the constraints")]
    Infeasible,

    /// A flat encoding did not match the expected layout.
    #[error("encoding layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },

    /// Two parameter sets that must be congruent are not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A loss or gradient stopped being finite during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A checkpoint file could not be interpreted.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A config or instance file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("edit rejected: {} violation(s)", .0.len())]
    Validation(Vec<Violation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate footprint for building `{0}` (zero area)")]
    DegenerateFootprint(String),

    #[error("inequality index undefined: {0}")]
    Domain(String),

    #[error(
        "move-in calibration infeasible: capacity {capacity} needs more than the {positive} residents with positive mean benefit (gap {gap})"
    )]
    InfeasibleCalibration { capacity: f64, positive: usize, gap: f64 },

    #[error("IPF did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("constraint set excludes the current design: {0}")]
    InfeasibleConstraints(String),

    #[error("{players} edited blocks exceed the exact Shapley limit of {limit}; use sampled mode")]
    TooManyPlayers { players: usize, limit: usize },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("corrupted timeline index: {0}")]
    CorruptIndex(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

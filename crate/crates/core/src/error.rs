use thiserror::Error;

/// Errors raised by sampling, policy evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ensemble state error: {0}")]
    State(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded power: {0}")]
    Unbounded(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    ResourceGuard { cells: u128, budget: u128 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

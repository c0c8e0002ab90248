use thiserror::Error;

use crate::admm::ConvergenceReport;
use crate::dc::DcTrace;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A likelihood or divergence was evaluated where a required entry is zero.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method ran out of iterations. Solver failures carry the
    /// final report so callers can still export the trace.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}): {message}")]
    Convergence { message: String, iterations: usize, residual: f64, report: Option<Box<ConvergenceReport>> },

    #[error("rank {rank} still exceeds target {target} after the penalty schedule")]
    RankFailure { rank: usize, target: usize, trace: Box<DcTrace> },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty result: {0}")]
    EmptyResult(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

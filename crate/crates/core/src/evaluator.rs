//! The residual-evaluator contract: parameters in, residuals `r = y − f(x, β)` out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a residual evaluation failed.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "category", content = "detail", rename_all = "snake_case")]
pub enum EvalError {
    #[error("non-finite residual at index {0}")]
    NonFinite(usize),
    #[error("residual length changed from {expected} to {found}")]
    LengthChanged { expected: usize, found: usize },
    #[error("model evaluation failed: {0}")]
    Model(String),
    #[error("evaluator reported an error: {0}")]
    Remote(String),
    #[error("could not launch evaluator process: {0}")]
    SpawnFailed(String),
    #[error("evaluator process died: {0}")]
    ProcessDied(String),
    #[error("evaluator timed out after {0:.3} s")]
    Timeout(f64),
    #[error("malformed evaluator response: {0}")]
    Malformed(String),
    #[error("evaluator is not deterministic: repeated evaluation differs at index {0}")]
    NonDeterministic(usize),
    #[error("evaluator I/O error: {0}")]
    Io(String),
}

impl EvalError {
    /// Failures that cannot be recovered by trying a different parameter vector.
    ///
    /// The line search treats the remaining categories as a failed trial and
    /// keeps halving.
    pub fn is_fatal(&self) -> bool {
        !matches!(
            self,
            EvalError::NonFinite(_) | EvalError::Model(_) | EvalError::Remote(_)
        )
    }

    pub fn category(&self) -> &'static str {
        match self {
            EvalError::NonFinite(_) => "non_finite",
            EvalError::LengthChanged { .. } => "length_changed",
            EvalError::Model(_) => "model",
            EvalError::Remote(_) => "remote",
            EvalError::SpawnFailed(_) => "spawn_failed",
            EvalError::ProcessDied(_) => "process_died",
            EvalError::Timeout(_) => "timeout",
            EvalError::Malformed(_) => "malformed",
            EvalError::NonDeterministic(_) => "non_deterministic",
            EvalError::Io(_) => "io",
        }
    }
}

/// Anything that maps a parameter vector to a residual vector.
///
/// Implementations must be deterministic within a run and return the same
/// number of residuals on every call.
pub trait ResidualEvaluator<T> {
    fn evaluate(&mut self, params: &[T]) -> Result<Vec<T>, EvalError>;
}

impl<T, F> ResidualEvaluator<T> for F
where
    F: FnMut(&[T]) -> Result<Vec<T>, EvalError>,
{
    fn evaluate(&mut self, params: &[T]) -> Result<Vec<T>, EvalError> {
        self(params)
    }
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "inner solve did not reach tolerance: residual {residual:.3e} after {iters} iterations"
    )]
    InnerSolve { residual: f64, iters: usize },

    #[error("support identification stopped with {0} unresolved indices")]
    AmbiguousSupports(AmbiguousSupports),

    #[error("oracle failure: {0}")]
    Oracle(String),
}

/// Carries the index set (0-based) that could not be classified before the
/// iteration budget ran out, plus the iteration at which we gave up.
#[derive(Debug, Clone)]
pub struct AmbiguousSupports {
    pub indices: Vec<usize>,
    pub stopped_at: usize,
}

impl std::fmt::Display for AmbiguousSupports {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} at iteration {}", self.indices, self.stopped_at)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

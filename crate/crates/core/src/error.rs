use thiserror::Error;

/// Errors surfaced by the solver suite.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at tape node {node}")]
    NonFinite { node: usize },

    #[error("non-finite adjoint at tape node {node}")]
    NonFiniteAdjoint { node: usize },

    #[error("non-finite term at point index {index} in {context}")]
    NonFiniteTerm { context: &'static str, index: usize },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("fewer usable interior points than boundary points ({have} < {need})")]
    InsufficientMatches { have: usize, need: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}, epoch {epoch}: loss {loss:e} exceeds {limit:e}")]
    Diverged {
        step: usize,
        epoch: usize,
        loss: f64,
        limit: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sinkhorn did not converge after {iterations} iterations (residual {residual:e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

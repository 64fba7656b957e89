use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// No training point carries kernel mass at this support point; the
    /// support has left the region covered by the sampling measure.
    #[error("degenerate neighborhood at support point {query_index}")]
    DegenerateNeighborhood { query_index: usize },

    /// Every support point is far from all training data, so the
    /// reweighting coefficients cannot be normalized.
    #[error("support is totally lost: reweighting mass {mass:e} below floor")]
    TotallyLostSupport { mass: f64 },

    #[error("non-finite value in block `{block}` ({context})")]
    NumericalOverflow { block: String, context: String },

    #[error("rollout diverged at step {step}")]
    DivergedRollout { step: usize },

    #[error("no convergence after {iterations} iterations (last displacement {last_displacement:e})")]
    ConvergenceFailure { iterations: usize, last_displacement: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

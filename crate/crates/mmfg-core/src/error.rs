//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by solvers, simulators and metric computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A drift/diffusion/value evaluation produced a non-finite number.
    /// Carries the time and state at which it happened.
    #[error("numerical blowup at t = {time}: {detail} (state {state:?})")]
    NumericalBlowup {
        time: f64,
        state: Vec<f64>,
        detail: String,
    },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// Fixed-point or Picard loop hit its iteration cap. The trace of
    /// successive distances is attached for diagnosis.
    #[error("iteration limit after {iterations} sweeps (last distance {last_distance:.3e})")]
    IterationLimit {
        iterations: usize,
        last_distance: f64,
        trace: Vec<f64>,
    },

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    /// A structural assumption required by the requested experiment does
    /// not hold for the supplied model (e.g. minor dynamics depending on
    /// the major state in a major-deviation run).
    #[error("structural assumption violated: {0}")]
    Structural(String),

    /// An internal cross-check failed (coefficient matching, regression
    /// rank, conservation).
    #[error("internal consistency: {0}")]
    Inconsistency(String),

    /// Explicit-part stability violated; suggests refining the time grid.
    #[error("stability violation: {0}")]
    Stability(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

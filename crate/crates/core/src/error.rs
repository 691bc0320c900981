//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, solving and auditing operations.
///
/// Divergence of a simulated run is *not* an error: it is a legitimate
/// experimental outcome carried by [`crate::engine::RunOutcome`].
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A state index is outside the model's state set.
    #[error("unknown state index {index} (model has {n_states} states)")]
    UnknownState { index: usize, n_states: usize },

    /// A control index is outside the model's control set.
    #[error("unknown control index {index} (model has {n_controls} controls)")]
    UnknownControl { index: usize, n_controls: usize },

    /// A chain (or a deterministic policy's chain) has more than one
    /// recurrent class, so the invariant measure is not unique.
    #[error("multichain: {0}")]
    Multichain(String),

    /// An iterative numerical routine failed to converge or a solve
    /// encountered a (numerically) singular system.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A differential-inclusion trajectory left the finite range of f64.
    #[error("flow blow-up at t = {time}")]
    BlowUp { time: f64 },

    /// A sampled estimator could not produce an answer within its horizon.
    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    /// A configuration table is incomplete or internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

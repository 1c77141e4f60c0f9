//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by estimation, resampling, and covariance routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input lengths or shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument is outside its admissible range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The design is rank deficient or leaves the program unbounded
    /// (for example a covariate collinear with the unit indicators).
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// Too few bootstrap replicates for the requested quantile.
    #[error("insufficient replicates: need ceil(B*q) >= 1, got B = {replicates} at tail probability {tail_prob}")]
    InsufficientReplicates { replicates: usize, tail_prob: f64 },

    /// A covariance diagonal entry is negative beyond numerical slack.
    #[error("negative covariance diagonal at coordinate {index}: {value}")]
    NegativeDiagonal { index: usize, value: f64 },

    /// A standard error used for studentization is zero or negative.
    #[error("nonpositive standard error: {0}")]
    NonpositiveSe(String),

    /// The restriction covariance R * Sigma * R' is not invertible.
    #[error("singular restriction: {0}")]
    SingularRestriction(String),

    /// The density-weighted design matrix cannot be inverted.
    #[error("singular gamma matrix: {0}")]
    SingularGamma(String),

    /// All kernel weights vanished for one unit; the bandwidth is too small.
    #[error("kernel weights for unit {unit} sum to zero (bandwidth too small)")]
    ZeroKernelMass { unit: usize },

    /// More than the tolerated share of bootstrap replicates failed.
    #[error("{failed} of {total} bootstrap replicates failed to converge (limit {limit_percent}%)")]
    TooManyFailedReplicates {
        failed: usize,
        total: usize,
        limit_percent: f64,
    },

    /// A Monte Carlo repetition failed; the index identifies which one.
    #[error("simulation repetition {rep} failed: {source}")]
    RepFailed {
        rep: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared by all modules of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an API contract (shape mismatch, bad argument, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Cholesky hit a non-positive pivot; the matrix is not positive definite.
    #[error("decomposition failure: pivot {pivot} is {value:.6e}, matrix is not positive definite")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// Triangular inverse hit a zero or negative diagonal entry.
    #[error("singular matrix: diagonal entry {index} is {value:.6e}")]
    Singular { index: usize, value: f64 },

    /// The Jacobi eigensolver did not reach its threshold within the sweep cap.
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:.6e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// An eigenvector adjoint touches a pair of near-equal eigenvalues, so the
    /// gradient is numerically meaningless.
    #[error(
        "degenerate spectrum: eigenvalues {i} and {j} differ by {gap:.6e} (threshold {threshold:.6e})"
    )]
    DegenerateSpectrum {
        i: usize,
        j: usize,
        gap: f64,
        threshold: f64,
    },

    /// Too few samples for a covariance estimate.
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// Cosine of a zero-norm vector is undefined.
    #[error("undefined score: zero-norm vector (row {row} of {view})")]
    UndefinedScore { view: String, row: usize },

    /// A layer tape was used after a newer forward pass invalidated it.
    #[error("stale tape: tape from forward pass {tape}, layer is at pass {layer}")]
    StaleTape { tape: u64, layer: u64 },

    /// The CCA layer statistics were never fitted.
    #[error("layer statistics not fitted; run a training forward pass or refit first")]
    Unfitted,

    /// A gradient came back NaN or infinite.
    #[error("poisoned gradient: non-finite value in {0}")]
    PoisonedGradient(String),

    /// A serialized file is malformed.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}

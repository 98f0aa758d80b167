use thiserror::Error;

/// Errors produced by model construction, solvers and reporting commands.
#[derive(Debug, Error)]
pub enum ChainError {
    /// A model or simulation parameter violates its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The drift matrix is not Hurwitz, so no stationary solve is possible.
    #[error("drift matrix is not stable (spectral abscissa {abscissa:.3e}); no unique stationary solution")]
    UnstableDrift { abscissa: f64 },

    /// An eigenvalue/Schur iteration failed to converge.
    #[error("eigenvalue computation failed to converge for order-{order} matrix")]
    EigenFailure { order: usize },

    /// A matrix argument has the wrong shape for the requested operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A structured solve was asked for a symmetry class that admits no solution.
    #[error("no solution with requested symmetry: {0}")]
    NoStructuredSolution(String),

    /// Quadrature horizon too short for the requested truncation accuracy.
    #[error("integration horizon too short: {detail}; suggested horizon {suggested:.1}")]
    HorizonTooShort { detail: String, suggested: f64 },

    /// A trajectory left the configured guard region (time step too large).
    #[error("trajectory diverged at t = {t:.3} (|state|_max = {norm:.3e}); reduce dt")]
    Diverged { t: f64, norm: f64 },

    /// A verification check failed.
    #[error("verification failed: {0}")]
    CheckFailed(String),

    /// Malformed configuration input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem errors, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ChainError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ChainError::Io {
            path: path.into(),
            source,
        }
    }
}

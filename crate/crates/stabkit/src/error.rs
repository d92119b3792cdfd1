use thiserror::Error;

/// Errors produced by stability computations and data handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix entries must be finite (found {value} at row {row}, col {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular or nearly singular (smallest singular value {sigma_min:.3e})")]
    Singular { sigma_min: f64 },

    #[error("{measure} is defined for stable equilibria only (spectral abscissa {alpha:.6e} >= 0)")]
    Unstable { measure: &'static str, alpha: f64 },

    #[error("matrix is marginally stable (spectral abscissa {alpha:.3e} within {tol:.1e} of 0); stability measures diverge at the boundary")]
    MarginallyStable { alpha: f64, tol: f64 },

    #[error("eigenvalue iteration failed to converge for {n}x{n} matrix (norm {norm:.3e}, condition estimate {cond_estimate:.3e})")]
    EigenFailure {
        n: usize,
        norm: f64,
        cond_estimate: f64,
    },

    #[error("shift {z} is within {tol:.1e} of the spectrum")]
    ShiftInSpectrum { z: num_complex::Complex64, tol: f64 },

    #[error("matrix is not symmetric positive semi-definite (min eigenvalue {min_eig:.3e}, asymmetry {asymmetry:.3e})")]
    NotPsd { min_eig: f64, asymmetry: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

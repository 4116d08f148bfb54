use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: symmetry defect {defect:.3e}")]
    NotHermitian { defect: f64 },

    #[error("matrix is not symmetric: symmetry defect {defect:.3e}")]
    NotSymmetric { defect: f64 },

    #[error("Cholesky factorisation failed at pivot {pivot} (value {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error(
        "regularised Gram matrix is not positive definite (pivot {pivot}, smallest eigenvalue {sigma_min_sq:.3e})"
    )]
    GramFactorisation { pivot: usize, sigma_min_sq: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("curvature probe scale {h:.3e} underflows against field norm {field_norm:.3e}")]
    ProbeUnderflow { h: f64, field_norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

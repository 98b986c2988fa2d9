use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sequence at index {index}: {reason}")]
    InvalidSequence { index: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid multi-qubit program: {0}")]
    InvalidProgram(String),

    #[error("spectral form divergent: {0}")]
    Divergent(String),

    #[error("series unreliable at this T: last-term ratio {ratio:.3e} exceeds {limit}")]
    SeriesUnreliable { ratio: f64, limit: f64 },

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("correlation expansion unavailable: {0}")]
    ExpansionUnavailable(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("scaling fit rejected: {0}")]
    FitRejected(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (leading minor {minor} failed)")]
    Singular { minor: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical divergence in {component}")]
    Divergence { component: String },

    #[error("measurement rejected: innovation covariance is singular")]
    MeasurementRejected,

    #[error("degenerate covariance along constraint direction (alpha' Sigma alpha = {0})")]
    DegenerateCovariance(f64),

    #[error("constraint does not have relative degree 2 (|L_g h_b| = {0})")]
    WrongRelativeDegree(f64),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

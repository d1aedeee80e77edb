use thiserror::Error;

use crate::geometry::ChartPoint;

/// Errors raised by geometry, observable and dynamics operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("differentiation failed at the requested point: {0}")]
    DifferentiationFailure(String),

    #[error("degenerate plane: gradient norm {norm:.3e} below threshold {threshold:.1e}")]
    DegeneratePlane { norm: f64, threshold: f64 },

    #[error("point is not representable in chart {chart} (denominator {denominator:.3e})")]
    UnreachableChart { chart: usize, denominator: f64 },

    #[error("curvature estimation failed: {0}")]
    EstimationFailure(String),

    #[error("operator is not Hermitian: entry ({row}, {col}) differs from conjugate of ({col}, {row}) by {deviation:.3e}")]
    NonHermitian {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integration blew up at step {step}")]
    BlowUp { step: usize, last_valid: ChartPoint },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("oracle integration failure: {0}")]
    OracleFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

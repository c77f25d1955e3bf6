use thiserror::Error;

/// Errors produced by the geometry, frame-bundle, sampling and action layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the chart domain of `{family}`")]
    OutOfChart { family: String, point: Vec<f64> },

    #[error("metric is not positive definite at t={t}, x={point:?}")]
    SingularMetric { t: f64, point: Vec<f64> },

    #[error("frame basis is degenerate (column {column} has vanishing norm)")]
    DegenerateBasis { column: usize },

    #[error("initial frame is not orthonormal (defect {defect:e} > {tolerance:e})")]
    NonOrthonormalStart { defect: f64, tolerance: f64 },

    #[error("integration blew up at t={t}")]
    BlowUp { t: f64 },

    #[error("minimizer did not converge after {iterations} iterations (gradient {gradient:e})")]
    NotConverged { iterations: usize, gradient: f64 },

    #[error("unknown metric family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameters for `{family}`: {reason}")]
    InvalidParams { family: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::NotConverged { .. } | Error::SingularMetric { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

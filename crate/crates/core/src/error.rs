//! Error type shared by all toolkit modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("point {point:?} violates the domain guard of '{name}'")]
    DomainGuard { name: String, point: Vec<f64> },

    #[error("finite-difference step {h:e} is below the 1e-12 underflow limit")]
    StepUnderflow { h: f64 },

    #[error("volume weight g = {value:e} at {point:?} is too close to zero")]
    DegenerateWeight { value: f64, point: Vec<f64> },

    #[error("empty sample set")]
    EmptySamples,

    #[error("non-finite position for particle {particle} at step {step}")]
    NonFinitePosition { particle: usize, step: u64 },

    #[error("boundary overshoot on axis {axis}: displacement exceeds one reflection (dt too large)")]
    BoundaryOvershoot { axis: usize },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityBound { dt: f64, bound: f64 },

    #[error("negative density {value:e} at cell {cell:?}")]
    NegativeDensity { value: f64, cell: [usize; 3] },

    #[error("density must be strictly positive for log-form diagnostics (min = {min:e})")]
    NonPositiveDensity { min: f64 },

    #[error("steady-state iteration stopped at residual {residual:e} after {steps} steps (tol {tol:e})")]
    NotConverged { residual: f64, steps: u64, tol: f64 },

    #[error("operator is not Beltrami at grid tolerance (max residual {residual:e})")]
    NotBeltrami { residual: f64 },

    #[error("orthogonal coordinate check failed: {0}")]
    CoordsNotOrthogonal(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("missing time-derivative evaluator for '{0}'")]
    MissingTimeDerivative(String),

    #[error("particle at {point:?} falls outside the histogram range")]
    OutOfRange { point: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

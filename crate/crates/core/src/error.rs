use thiserror::Error;

use crate::integrators::StepReport;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (zero pivot in column {column})")]
    Singular { column: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular mass matrix: {0}")]
    SingularMass(#[from] LinalgError),
    #[error("point ({x}, {y}) is outside the reachable annulus [{inner}, {outer}]")]
    Unreachable {
        x: f64,
        y: f64,
        inner: f64,
        outer: f64,
    },
    #[error("point at radius {radius} is within 1e-9 of the workspace boundary")]
    NearSingular { radius: f64 },
    #[error("kinematic Jacobian is singular (|det J| = {det:e})")]
    SingularJacobian { det: f64 },
    #[error("reference undefined at t = {t}")]
    ReferenceUndefined { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t}: step {step:e} below minimum {min:e}")]
    StepSizeUnderflow { t: f64, step: f64, min: f64 },
    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("Newton iteration did not converge (residual {:e} after {} iterations)", .0.final_residual, .0.iterations)]
    NewtonFailed(StepReport),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid controller design: {0}")]
    InvalidDesign(String),
    #[error("stage equations not solved at t = {t} (residual {:e} after {} iterations)", .report.final_residual, .report.iterations)]
    StageSolve { t: f64, report: StepReport },
    #[error("first sampling step needs an initial {0}")]
    MissingInitialValue(&'static str),
    #[error("full-state feedback requested but no momentum measurement supplied")]
    MissingMeasurement,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<LinalgError> for ControlError {
    fn from(e: LinalgError) -> Self {
        ControlError::Model(ModelError::SingularMass(e))
    }
}

impl From<LinalgError> for IntegrationError {
    fn from(e: LinalgError) -> Self {
        IntegrationError::Model(ModelError::SingularMass(e))
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("plant integration failed: {0}")]
    Plant(#[from] IntegrationError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

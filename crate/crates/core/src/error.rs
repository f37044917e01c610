use alloc::string::String;

/// Failures raised by the simulation, control and learning layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("pitch {pitch} rad is within the gimbal guard of +/-pi/2")]
    GimbalLock { pitch: f64 },
    #[error("mass matrix is not symmetric positive-definite")]
    SingularMass,
    #[error("invalid plant parameters: {0}")]
    InvalidPlant(String),
    #[error("state magnitude exceeded the blow-up bound at step {step}")]
    NumericBlowup { step: usize },
    #[error("pole value {0} is not strictly positive")]
    Domain(f64),
    #[error("no baseline pole triple meets the settling criterion on DoF {dof}")]
    NoFeasibleGains { dof: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("insufficient data: need {needed}, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("controller diverged: error norm {distance} m exceeded the abort bound")]
    ControllerDiverged { distance: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

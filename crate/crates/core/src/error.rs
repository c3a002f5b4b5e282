use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum QsimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("truncation too small: {0}")]
    Truncation(String),

    #[error("integrator step size underflow at t = {t:.6e} s (step {step:.3e} s)")]
    StepUnderflow { t: f64, step: f64 },

    #[error("integrator tolerance not met: {0}")]
    ToleranceNotMet(String),

    #[error("degenerate steady state: null space dimension > 1 ({0})")]
    DegenerateSteadyState(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("convergence gate failed: {0}")]
    ConvergenceGate(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QsimError>;

impl QsimError {
    /// Process exit code used by the `qsim` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            QsimError::Config(_) | QsimError::InvalidArgument(_) | QsimError::Json(_) => 2,
            QsimError::ConvergenceGate(_) => 4,
            _ => 3,
        }
    }
}

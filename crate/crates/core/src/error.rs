use thiserror::Error;

/// Errors shared by every module of the toolkit.
#[derive(Debug, Error)]
pub enum GravError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("evaluation point within {dist:.3e} of a star (guard {guard:.1e})")]
    Singularity { dist: f64, guard: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("sum did not converge: last increment {last_increment:.3e} above {tolerance:.3e}")]
    Convergence { last_increment: f64, tolerance: f64 },

    #[error("quadrature reached {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point-set fit certified {achieved:.3e}, requested {requested:.3e}")]
    Certification { achieved: f64, requested: f64 },

    #[error("step size underflow at t={time:.6} near position {position:?}")]
    StepUnderflow { time: f64, position: Vec<f64> },

    #[error("degenerate cell: {0}")]
    DegenerateCell(String),

    #[error("quality check failed: {0}")]
    Quality(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GravError>;

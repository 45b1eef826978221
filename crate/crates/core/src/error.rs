use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mesh level {0} is below the minimum level 2")]
    InvalidLevel(u32),

    #[error("point ({x}, {y}) lies outside the domain [-1,1]^2")]
    PointOutside { x: f64, y: f64 },

    #[error("fine level {fine} is not nested in coarse level {coarse}")]
    NotNested { coarse: u32, fine: u32 },

    #[error("factorization breakdown at row {row} (pivot {pivot:e})")]
    Breakdown { row: usize, pivot: f64 },

    #[error("iterative solver did not converge in {iterations} iterations (last relative residual {:e})", .residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { iterations: usize, residuals: Vec<f64> },

    #[error("low-rank core system is singular")]
    SingularCore,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Kellogg parameter solve did not converge after {iterations} iterations (residual {residual:e})")]
    KelloggNoConvergence { iterations: usize, residual: f64 },

    #[error("gradient requested at the singular point")]
    SingularGradient,

    #[error("no decay phase found in the error history")]
    NoDecayPhase,

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

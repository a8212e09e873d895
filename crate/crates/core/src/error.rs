use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The paired-rollout ratios did not decay; `growth` is the fitted per-step rate.
    #[error("closed loop is empirically unstable (per-step growth {growth:.6})")]
    UnstableSystem { growth: f64 },

    #[error("not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("gradient descent diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<DMatrix<f64>>,
    },

    #[error("trajectory too short: need T >= {min_t}")]
    TrajectoryTooShort { min_t: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

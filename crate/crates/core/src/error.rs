use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A propagated state left the finite range (|component| > 1e12 or NaN).
    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("no feasible equilibrium found (best fixed-point residual {residual:e})")]
    Infeasible { residual: f64 },

    #[error("class-K fit failed: bin at radius {radius} has infimum {infimum:e}")]
    FitFailure { radius: f64, infimum: f64 },

    #[error("closed-loop step {step} failed: {message}")]
    StepFailure { step: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

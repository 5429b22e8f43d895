use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The walk hit its step cap before crossing the level.
    #[error("path censored after {steps} steps")]
    CensoredPath { steps: u64 },

    #[error("ladder {completed} not completed within the step cap")]
    CensoredLadder { completed: usize },

    #[error("only {found} rays landed in the conditioning window, need {required}")]
    InsufficientConditioningMass { found: u64, required: u64 },

    #[error("occupation bin near a = {a:.4} has {visits} visits, need {required}")]
    UnreliableTail { a: f64, visits: u64, required: u64 },

    #[error("denominator sample mean {0} is not positive")]
    DegenerateDenominator(f64),

    #[error("no convergence after {iterations} iterations (defect {defect:e})")]
    NonConvergence { iterations: usize, defect: f64 },

    #[error("truncation error bound {bound:e} exceeds tolerance {tol:e}")]
    TruncationDominates { bound: f64, tol: f64 },

    #[error("renewal window {window} does not cover s_max = {s_max}")]
    WindowTooSmall { window: f64, s_max: f64 },

    #[error("monotone iteration decreased at s = {s} in sweep {sweep}")]
    NonMonotone { sweep: usize, s: f64 },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

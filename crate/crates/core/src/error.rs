use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid environment: {0}")]
    InvalidEnv(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid horizon {horizon}: discount factor would be {gamma}")]
    InvalidHorizon { horizon: usize, gamma: f64 },

    #[error("solver did not converge after {iterations} iterations (last gap {gap:e})")]
    NonConvergence { iterations: u64, gap: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("regression target {target} at index {index} outside [0, {bound}]")]
    TargetOutOfRange { index: usize, target: f64, bound: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

/// Errors raised by the solver and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decay rate lambda must be negative, got {0}")]
    NonNegativeRate(f64),

    #[error("time {t} is not on the grid with step {dt}")]
    OffGrid { t: f64, dt: f64 },

    #[error("window violation: {0}")]
    Window(String),

    #[error("no contraction: bound -L*d^2/lambda = {bound} is not below 1")]
    NoContraction { bound: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NotConverged { iterations: usize, last_step: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed path dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

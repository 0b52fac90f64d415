use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("alignment undefined: {0}")]
    UndefinedAlignment(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("size budget exceeded: {0}")]
    Size(String),
    #[error("left the first-order regime at step {step}: {reason}")]
    RegimeExit { step: usize, reason: String },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (reversed
    /// bounds, scale outside the ladder, negative distance...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation was called with inputs it does not accept by contract.
    #[error("misuse: {0}")]
    Misuse(String),

    #[error("invalid ladder: {0}")]
    InvalidLadder(String),

    #[error("scale pair ({lam}, {mu}) is not available in the kernel table")]
    ScaleLookup { lam: f64, mu: f64 },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("integration blew up at step {step} (scale {scale})")]
    Integration { step: usize, scale: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A run finished but missed a configured quality threshold.
    #[error("threshold not met: {0}")]
    Threshold(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

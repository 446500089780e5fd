use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("fake user id collides with an existing user: {0}")]
    UserCollision(String),

    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("profile validation failed after {attempts} attempts: {details}")]
    ValidationFailed { attempts: usize, details: String },

    #[error("out-of-order memory timestamp: {new} < {last}")]
    OutOfOrderTimestamp { new: i64, last: i64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;

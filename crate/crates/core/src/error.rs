use mstf_numkernel::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("missing-rate interval ({lo}, {hi}] admits no missing count for length {len}")]
    EmptyInterval { lo: f64, hi: f64, len: usize },
    #[error("invalid missing-rate interval ({lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("{what}: length mismatch, expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty sample set")]
    EmptySet,
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for CoreError {
    fn from(e: csv::Error) -> Self {
        CoreError::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

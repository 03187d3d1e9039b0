use mstf_core::CoreError;
use mstf_numkernel::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) | HarnessError::Io(_) => 2,
            HarnessError::Divergence { .. } | HarnessError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::InvalidInterval { .. } | CoreError::EmptyInterval { .. } => {
                HarnessError::Usage(e.to_string())
            }
            CoreError::Kernel(KernelError::NonFinite { .. }) => HarnessError::Numerical(e.to_string()),
            CoreError::Io(io) => HarnessError::Io(io),
            other => HarnessError::Data(other.to_string()),
        }
    }
}

impl From<KernelError> for HarnessError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::NonFinite { .. } => HarnessError::Numerical(e.to_string()),
            KernelError::Checkpoint(_) | KernelError::Io(_) => HarnessError::Data(e.to_string()),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

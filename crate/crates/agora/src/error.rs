use std::io;
use std::path::Path;

use agora_core::billing::BillingError;
use agora_core::econ::EconError;
use agora_core::pricing::PricingError;
use agora_core::workload::WorkloadError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgoraError {
    /// Bad or inconsistent input; exit status 2.
    #[error("{0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("journal full: {0} bytes pending, billing cannot be guaranteed")]
    JournalFull(u64),
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = AgoraError> = std::result::Result<T, E>;

impl AgoraError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AgoraError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| AgoraError::Io { context, source }
    }

    pub fn at_path(path: &Path) -> impl FnOnce(io::Error) -> Self {
        Self::io(path.display().to_string())
    }
}

impl From<WorkloadError> for AgoraError {
    fn from(e: WorkloadError) -> Self {
        AgoraError::Config(e.to_string())
    }
}

impl From<PricingError> for AgoraError {
    fn from(e: PricingError) -> Self {
        AgoraError::Config(e.to_string())
    }
}

impl From<EconError> for AgoraError {
    fn from(e: EconError) -> Self {
        AgoraError::Config(e.to_string())
    }
}

impl From<BillingError> for AgoraError {
    fn from(e: BillingError) -> Self {
        AgoraError::Runtime(e.to_string())
    }
}

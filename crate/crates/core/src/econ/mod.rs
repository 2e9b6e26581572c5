//! Revenue simulation: pricing traces under FBP (ideal and sampled) and TBP,
//! and Monte-Carlo experiments over job distributions.

mod accumulate;
mod experiment;
mod sampling;

pub use accumulate::ChargeAccumulator;
pub use experiment::{
    f_percent, run_experiment, sampling_error_sweep, RevenueReport, SamplingErrorRow, DEFAULT_N_JOBS,
};
pub use sampling::{price_ideal, price_sampled, SamplingConfig, SamplingMode, TailPolicy};

use alloc::string::String;
use thiserror::Error;

use crate::pricing::PricingError;
use crate::workload::WorkloadError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("record {index}: {source}")]
    OutOfDomain { index: usize, source: PricingError },
    #[error("sampling period must be positive")]
    BadPeriod,
    #[error("cost lists differ in length ({fbp} vs {tbp})")]
    LengthMismatch { fbp: usize, tbp: usize },
    #[error("no costs to compare")]
    Empty,
    #[error("unknown reference GPU `{0}`")]
    UnknownGpu(String),
    #[error("n_jobs must be positive")]
    NoJobs,
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

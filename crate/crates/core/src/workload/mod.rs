//! Workloads: utilization traces, synthetic generators, the LLM decode
//! roofline model and weighted job distributions.

mod distribution;
pub mod fixture;
mod roofline;
mod synthetic;
mod trace;

pub use distribution::{derive_seed, sample_job, JobDistribution, JobEntry, JobSampler, JobSpec, ResolvedJob};
pub use roofline::{llm_decode_step, llm_decode_trace, Attention, DecodeStep, LlmModelConfig};
pub use synthetic::{gen_synthetic_trace, Component, Dist, KernelProfile, SyntheticSpec};
pub use trace::{trace_stats, Trace, TraceStats, UtilizationRecord, BW_TOLERANCE};

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("malformed trace at {location}: {reason}")]
    Malformed { location: String, reason: String },
    #[error("trace has no records")]
    EmptyTrace,
    #[error("record {index} uses {bw} TB/s, above the {gpu} peak of {max} TB/s")]
    BwExceedsGpu {
        index: usize,
        bw: f64,
        gpu: String,
        max: f64,
    },
    #[error("record {index} is invalid: {reason}")]
    InvalidRecord { index: usize, reason: &'static str },
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("job `{job}` has no trace for GPU `{gpu}`")]
    MissingTraceBinding { job: String, gpu: String },
    #[error("bad distribution: {0}")]
    BadDistribution(String),
}

//! Time-based and feature-based pricing.
//!
//! Time-based pricing (TBP) charges a flat hourly rate per GPU model.
//! Feature-based pricing (FBP) charges an hourly rate that is a piecewise
//! linear function of the bandwidth the job is using, shared by every GPU
//! model in the catalog.

mod catalog;
mod curve;
mod desiderata;

pub use catalog::{capability_price_ratio, tbp_cost, tbp_cost_micros, Efficiency, GpuCatalog, GpuModel};
pub use curve::{CurveDef, FbpCurve, SegmentDef};
pub use desiderata::{validate_desiderata, DesiderataReport};

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("curve is not monotone: {0}")]
    NonMonotone(String),
    #[error("breakpoints must be strictly increasing and positive: {0}")]
    BadBreakpoints(String),
    #[error("bandwidth {bw} TB/s is outside the curve domain [0, {max}]")]
    OutOfDomain { bw: f64, max: f64 },
    #[error("invalid GPU model `{name}`: {reason}")]
    InvalidGpu { name: String, reason: &'static str },
    #[error("catalog must be strictly increasing by bandwidth: `{0}` is out of order")]
    UnsortedCatalog(String),
    #[error("duplicate GPU name `{0}` in catalog")]
    DuplicateGpu(String),
    #[error("unknown GPU `{0}`")]
    UnknownGpu(String),
    #[error("price must be positive")]
    ZeroPrice,
}

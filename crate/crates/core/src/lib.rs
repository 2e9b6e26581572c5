//! Feature-based pricing (FBP) for rented GPUs.
//!
//! This crate holds the pure parts of the system: pricing curves and the GPU
//! catalog, workload traces and the decode roofline model, the revenue
//! simulator, the billing-log format (compression, sealing, wire frames),
//! and the collector's rolling-frame ledger. Everything here is `no_std`
//! with `alloc`; file formats, networking and the CLI live in the `agora`
//! crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod billing;
pub mod capacity;
pub mod econ;
pub mod money;
pub mod pricing;
pub mod stats;
pub mod store;
pub mod telemetry;
pub mod workload;

pub use money::Nanodollars;
pub use pricing::{FbpCurve, GpuCatalog, GpuModel};
pub use telemetry::Sample;
pub use workload::{Trace, UtilizationRecord};

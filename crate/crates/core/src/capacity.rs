//! Back-of-the-envelope ingest volume for a metered fleet.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_YEAR: f64 = 31_536_000.0;
pub const PIB: f64 = 1024.0 * 1024.0 * 1024.0 * 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub bytes_per_second: f64,
    pub bits_per_second: f64,
    pub bytes_per_year: f64,
}

impl CapacityEstimate {
    pub fn gbit_per_second(&self) -> f64 {
        self.bits_per_second / 1e9
    }

    pub fn mb_per_second(&self) -> f64 {
        self.bytes_per_second / 1e6
    }

    pub fn pib_per_year(&self) -> f64 {
        self.bytes_per_year / PIB
    }
}

/// Raw telemetry volume of `nodes` nodes with `gpus_per_node` GPUs each,
/// sampled every `period_us` with `sample_bytes` per reading.
/// Returns `None` if any argument is zero.
pub fn estimate_capacity(
    nodes: u64,
    gpus_per_node: u64,
    period_us: u64,
    sample_bytes: u64,
) -> Option<CapacityEstimate> {
    if nodes == 0 || gpus_per_node == 0 || period_us == 0 || sample_bytes == 0 {
        return None;
    }
    let bytes_per_second = nodes as f64 * gpus_per_node as f64 * (1e6 / period_us as f64) * sample_bytes as f64;
    Some(CapacityEstimate {
        bytes_per_second,
        bits_per_second: bytes_per_second * 8.0,
        bytes_per_year: bytes_per_second * SECONDS_PER_YEAR,
    })
}

//! Fixed-width telemetry samples and trace replay at a fixed period.

use serde::{Deserialize, Serialize};

use crate::workload::{Trace, UtilizationRecord};

/// Encoded size of one [`Sample`].
pub const SAMPLE_BYTES: usize = 8;

/// Utilization fields map 0..=65535 onto 0..=1.
pub const UTIL_SCALE: f64 = 65_535.0;

/// One telemetry reading: bandwidth in MB/s and two utilizations scaled by
/// [`UTIL_SCALE`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Sample {
    pub bw_mbps: u32,
    pub compute: u16,
    pub dram: u16,
}

impl Sample {
    pub fn new(bw_mbps: u32, compute: u16, dram: u16) -> Self {
        Self { bw_mbps, compute, dram }
    }

    /// Quantizes a trace record (bandwidth to the nearest MB/s).
    pub fn from_record(r: &UtilizationRecord) -> Self {
        let util = |u: f64| libm::round(u.clamp(0.0, 1.0) * UTIL_SCALE) as u16;
        Self {
            bw_mbps: libm::round((r.bw * 1e6).clamp(0.0, u32::MAX as f64)) as u32,
            compute: util(r.compute_util),
            dram: util(r.dram_util),
        }
    }

    /// Bandwidth in TB/s.
    pub fn bw_tbps(&self) -> f64 {
        self.bw_mbps as f64 / 1e6
    }

    pub fn compute_util(&self) -> f64 {
        self.compute as f64 / UTIL_SCALE
    }

    pub fn dram_util(&self) -> f64 {
        self.dram as f64 / UTIL_SCALE
    }

    pub fn to_bytes(&self) -> [u8; SAMPLE_BYTES] {
        let mut b = [0u8; SAMPLE_BYTES];
        b[..4].copy_from_slice(&self.bw_mbps.to_be_bytes());
        b[4..6].copy_from_slice(&self.compute.to_be_bytes());
        b[6..].copy_from_slice(&self.dram.to_be_bytes());
        b
    }

    pub fn from_bytes(b: [u8; SAMPLE_BYTES]) -> Self {
        Self {
            bw_mbps: u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
            compute: u16::from_be_bytes([b[4], b[5]]),
            dram: u16::from_be_bytes([b[6], b[7]]),
        }
    }
}

/// One sampling instant produced by [`replay_sampler`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tick {
    pub index: u64,
    /// Offset of the tick from the start of the trace.
    pub at_us: u64,
    /// Time this sample stands for: the period, or less for the final tick.
    pub len_us: u64,
    pub sample: Sample,
}

/// Walks a trace and reads the record active at each tick `i * period`.
#[derive(Debug, Clone)]
pub struct ReplaySampler<'a> {
    trace: &'a Trace,
    period: u64,
    next: u64,
    record: usize,
    record_end: u64,
}

/// Samples `trace` every `period_us` microseconds. The stream ends at the
/// end of the trace. A zero period yields nothing.
pub fn replay_sampler(trace: &Trace, period_us: u64) -> ReplaySampler<'_> {
    ReplaySampler {
        trace,
        period: period_us,
        next: 0,
        record: 0,
        record_end: trace.records().first().map_or(0, |r| r.duration_us),
    }
}

impl ReplaySampler<'_> {
    /// Number of ticks the full stream contains.
    pub fn tick_count(&self) -> u64 {
        if self.period == 0 {
            return 0;
        }
        self.trace.total_us().div_ceil(self.period)
    }
}

impl Iterator for ReplaySampler<'_> {
    type Item = Tick;

    fn next(&mut self) -> Option<Tick> {
        let total = self.trace.total_us();
        if self.period == 0 {
            return None;
        }
        let at = self.next.checked_mul(self.period)?;
        if at >= total {
            return None;
        }
        let records = self.trace.records();
        while self.record_end <= at {
            self.record += 1;
            self.record_end += records[self.record].duration_us;
        }
        let tick = Tick {
            index: self.next,
            at_us: at,
            len_us: self.period.min(total - at),
            sample: Sample::from_record(&records[self.record]),
        };
        self.next += 1;
        Some(tick)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.tick_count().saturating_sub(self.next) as usize;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::GpuCatalog;
    use alloc::vec::Vec;

    fn trace(recs: &[(u64, f64)]) -> Trace {
        let cat = GpuCatalog::reference();
        Trace::new(
            cat.get("H100").unwrap(),
            recs.iter()
                .map(|&(d, bw)| UtilizationRecord::new(d, bw, 0.25, 0.5))
                .collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn byte_layout() {
        let s = Sample::new(0x0102_0304, 0x0506, 0x0708);
        assert_eq!(s.to_bytes(), [1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(Sample::from_bytes(s.to_bytes()), s);
    }

    #[test]
    fn quantization() {
        let s = Sample::from_record(&UtilizationRecord::new(1, 2.039, 0.12345, 1.0));
        assert_eq!(s.bw_mbps, 2_039_000);
        assert_eq!(s.compute, 8090);
        assert_eq!(s.dram, u16::MAX);
        assert_eq!(s.bw_tbps(), 2.039);
    }

    #[test]
    fn constant_trace_ten_ticks() {
        let t = trace(&[(500, 1.0)]);
        let ticks: Vec<_> = replay_sampler(&t, 50).collect();
        assert_eq!(ticks.len(), 10);
        assert!(ticks.iter().all(|k| k.sample == ticks[0].sample && k.len_us == 50));
    }

    #[test]
    fn left_endpoint_semantics() {
        // two records of 1.5 periods each
        let t = trace(&[(75, 1.0), (75, 2.0)]);
        let bws: Vec<_> = replay_sampler(&t, 50).map(|k| k.sample.bw_mbps).collect();
        assert_eq!(bws, [1_000_000, 1_000_000, 2_000_000]);
    }

    #[test]
    fn tail_is_shortened() {
        let t = trace(&[(120, 1.0)]);
        let s = replay_sampler(&t, 50);
        assert_eq!(s.tick_count(), 3);
        let lens: Vec<_> = s.map(|k| k.len_us).collect();
        assert_eq!(lens, [50, 50, 20]);
    }

    #[test]
    fn deterministic() {
        let t = trace(&[(37, 0.3), (11, 2.2), (90, 1.7)]);
        let a: Vec<_> = replay_sampler(&t, 7).collect();
        let b: Vec<_> = replay_sampler(&t, 7).collect();
        assert_eq!(a, b);
        assert_eq!(replay_sampler(&t, 0).count(), 0);
    }
}

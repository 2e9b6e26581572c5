use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::pricing::GpuModel;

/// Relative slack allowed when checking record bandwidth against a GPU peak.
pub const BW_TOLERANCE: f64 = 1e-9;

/// One kernel (or one decode step): how long it ran and what it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRecord {
    pub duration_us: u64,
    /// TB/s
    pub bw: f64,
    pub compute_util: f64,
    pub dram_util: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl UtilizationRecord {
    pub fn new(duration_us: u64, bw: f64, compute_util: f64, dram_util: f64) -> Self {
        Self {
            duration_us,
            bw,
            compute_util,
            dram_util,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    fn check(&self, index: usize) -> Result<(), WorkloadError> {
        let bad = |reason| Err(WorkloadError::InvalidRecord { index, reason });
        if self.duration_us == 0 {
            return bad("duration must be positive");
        }
        if !(self.bw.is_finite() && self.bw >= 0.0) {
            return bad("bandwidth must be finite and non-negative");
        }
        let unit = |u: f64| (0.0..=1.0).contains(&u);
        if !unit(self.compute_util) || !unit(self.dram_util) {
            return bad("utilization must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A job's bandwidth step function on one GPU model.
///
/// `BW(t)` is the bandwidth of the record covering `t`; the trace's total
/// duration is the job's time to completion on that GPU.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    gpu: String,
    records: Vec<UtilizationRecord>,
    token_count: Option<u64>,
    total_us: u64,
}

impl Trace {
    pub fn new(
        gpu: &GpuModel,
        records: Vec<UtilizationRecord>,
        token_count: Option<u64>,
    ) -> Result<Self, WorkloadError> {
        if records.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        let limit = gpu.bw_max * (1.0 + BW_TOLERANCE);
        let mut total_us: u64 = 0;
        for (index, r) in records.iter().enumerate() {
            r.check(index)?;
            if r.bw > limit {
                return Err(WorkloadError::BwExceedsGpu {
                    index,
                    bw: r.bw,
                    gpu: gpu.name.clone(),
                    max: gpu.bw_max,
                });
            }
            total_us = total_us
                .checked_add(r.duration_us)
                .ok_or(WorkloadError::InvalidRecord {
                    index,
                    reason: "total duration overflows",
                })?;
        }
        Ok(Self {
            gpu: gpu.name.clone(),
            records,
            token_count,
            total_us,
        })
    }

    pub fn gpu(&self) -> &str {
        &self.gpu
    }

    pub fn records(&self) -> &[UtilizationRecord] {
        &self.records
    }

    pub fn token_count(&self) -> Option<u64> {
        self.token_count
    }

    /// Time to completion in microseconds.
    pub fn total_us(&self) -> u64 {
        self.total_us
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Start offset of every record, plus the end of the trace.
    pub fn boundaries(&self) -> impl Iterator<Item = u64> + '_ {
        core::iter::once(0).chain(self.records.iter().scan(0u64, |t, r| {
            *t += r.duration_us;
            Some(*t)
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub total_us: u64,
    /// Time-weighted mean bandwidth, TB/s.
    pub mean_bw: f64,
    pub peak_bw: f64,
}

pub fn trace_stats(trace: &Trace) -> Result<TraceStats, WorkloadError> {
    if trace.records.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    let weighted: f64 = trace.records.iter().map(|r| r.bw * r.duration_us as f64).sum();
    let peak_bw = trace.records.iter().map(|r| r.bw).fold(0.0, f64::max);
    let mean_bw = if trace.records.iter().all(|r| r.bw == trace.records[0].bw) {
        trace.records[0].bw
    } else {
        weighted / trace.total_us as f64
    };
    Ok(TraceStats {
        total_us: trace.total_us,
        mean_bw,
        peak_bw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::GpuCatalog;
    use alloc::vec;

    fn h100() -> GpuModel {
        GpuCatalog::reference().get("H100").unwrap().clone()
    }

    #[test]
    fn stats_examples() {
        let g = h100();
        let t = Trace::new(&g, vec![UtilizationRecord::new(10, 1.25, 0.1, 0.1); 3], None).unwrap();
        let s = trace_stats(&t).unwrap();
        assert_eq!((s.mean_bw, s.peak_bw, s.total_us), (1.25, 1.25, 30));

        let t = Trace::new(
            &g,
            vec![
                UtilizationRecord::new(5, 0.0, 0.0, 0.0),
                UtilizationRecord::new(5, 2.039, 0.0, 0.0),
            ],
            None,
        )
        .unwrap();
        assert!((trace_stats(&t).unwrap().mean_bw - 1.0195).abs() < 1e-12);

        let t = Trace::new(
            &g,
            vec![
                UtilizationRecord::new(1, 3.0, 0.0, 0.0),
                UtilizationRecord::new(3, 1.0, 0.0, 0.0),
            ],
            None,
        )
        .unwrap();
        assert!((trace_stats(&t).unwrap().mean_bw - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_records() {
        let g = h100();
        assert_eq!(Trace::new(&g, vec![], None), Err(WorkloadError::EmptyTrace));
        assert!(matches!(
            Trace::new(&g, vec![UtilizationRecord::new(0, 1.0, 0.0, 0.0)], None),
            Err(WorkloadError::InvalidRecord { index: 0, .. })
        ));
        assert!(matches!(
            Trace::new(&g, vec![UtilizationRecord::new(1, 5.0, 0.0, 0.0)], None),
            Err(WorkloadError::BwExceedsGpu { index: 0, .. })
        ));
        assert!(Trace::new(&g, vec![UtilizationRecord::new(1, 1.0, 1.5, 0.0)], None).is_err());
        // tolerance at the peak
        assert!(Trace::new(
            &g,
            vec![UtilizationRecord::new(1, 3.35 * (1.0 + 1e-12), 0.0, 0.0)],
            None
        )
        .is_ok());
    }

    #[test]
    fn boundaries_are_cumulative() {
        let g = h100();
        let t = Trace::new(
            &g,
            vec![
                UtilizationRecord::new(3, 0.0, 0.0, 0.0),
                UtilizationRecord::new(4, 0.0, 0.0, 0.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(t.boundaries().collect::<Vec<_>>(), [0, 3, 7]);
    }
}

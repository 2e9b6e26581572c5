use serde::{Deserialize, Serialize};

use super::{ChargeAccumulator, EconError};
use crate::money::NANOS_PER_DOLLAR;
use crate::pricing::{FbpCurve, PricingError};
use crate::workload::{Trace, BW_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Price the bandwidth in effect at each tick for the whole period.
    Instantaneous,
    /// Price the time-weighted mean bandwidth over each period.
    WindowAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    /// The final partial period is charged for its actual length.
    #[default]
    ProRata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub period_us: u64,
    pub mode: SamplingMode,
    #[serde(default)]
    pub tail_policy: TailPolicy,
}

impl SamplingConfig {
    pub fn new(period_us: u64, mode: SamplingMode) -> Self {
        Self {
            period_us,
            mode,
            tail_policy: TailPolicy::ProRata,
        }
    }

    pub fn window_average(period_us: u64) -> Self {
        Self::new(period_us, SamplingMode::WindowAverage)
    }

    pub fn instantaneous(period_us: u64) -> Self {
        Self::new(period_us, SamplingMode::Instantaneous)
    }
}

/// Curve rate for a trace bandwidth; values within the trace tolerance above
/// the domain are priced at the top of the domain.
fn rate(curve: &FbpCurve, bw: f64, index: usize) -> Result<f64, EconError> {
    let max = curve.domain_max();
    let bw = if bw > max && bw <= max * (1.0 + BW_TOLERANCE) {
        max
    } else {
        bw
    };
    curve
        .rate_nanos_per_hour(bw)
        .map_err(|source: PricingError| EconError::OutOfDomain { index, source })
}

/// Exact integral of the curve over the trace's bandwidth step function,
/// in dollars.
pub fn price_ideal(trace: &Trace, curve: &FbpCurve) -> Result<f64, EconError> {
    let mut acc = ChargeAccumulator::new();
    for (i, r) in trace.records().iter().enumerate() {
        acc.push(rate(curve, r.bw, i)?, r.duration_us);
    }
    Ok(acc.finish() / NANOS_PER_DOLLAR)
}

/// Price under finite sampling, in dollars. Ticks fall at `i * period`
/// from the start of the trace.
pub fn price_sampled(trace: &Trace, curve: &FbpCurve, cfg: &SamplingConfig) -> Result<f64, EconError> {
    if cfg.period_us == 0 {
        return Err(EconError::BadPeriod);
    }
    let nanos = match cfg.mode {
        SamplingMode::Instantaneous => instantaneous(trace, curve, cfg.period_us)?,
        SamplingMode::WindowAverage => window_average(trace, curve, cfg.period_us)?,
    };
    Ok(nanos / NANOS_PER_DOLLAR)
}

fn instantaneous(trace: &Trace, curve: &FbpCurve, period: u64) -> Result<f64, EconError> {
    let total = trace.total_us();
    let records = trace.records();
    let mut acc = ChargeAccumulator::new();
    let (mut k, mut end) = (0usize, records[0].duration_us);
    let mut t = 0u64;
    while t < total {
        while end <= t {
            k += 1;
            end += records[k].duration_us;
        }
        // every tick in [t, end) reads record k
        let ticks = (end - t).div_ceil(period);
        let stop = t.saturating_add(ticks.saturating_mul(period));
        acc.push(rate(curve, records[k].bw, k)?, stop.min(total) - t);
        t = stop;
    }
    Ok(acc.finish())
}

fn window_average(trace: &Trace, curve: &FbpCurve, period: u64) -> Result<f64, EconError> {
    let total = trace.total_us();
    let records = trace.records();
    let mut acc = ChargeAccumulator::new();
    let (mut k, mut start, mut end) = (0usize, 0u64, records[0].duration_us);
    let mut t = 0u64;
    while t < total {
        while end <= t {
            k += 1;
            start = end;
            end += records[k].duration_us;
        }
        let w_end = t.saturating_add(period).min(total);
        if end >= w_end {
            // whole windows (and possibly the tail) inside record k
            let full = (end - t) / period;
            let stop = if full > 0 { t + full * period } else { w_end };
            acc.push(rate(curve, records[k].bw, k)?, stop.min(total) - t);
            t = stop.min(total);
            continue;
        }
        // window spans a record boundary: time-weighted mean
        let mut weighted = 0.0;
        let (mut j, mut j_start, mut j_end) = (k, start, end);
        loop {
            let lo = j_start.max(t);
            let hi = j_end.min(w_end);
            weighted += records[j].bw * (hi - lo) as f64;
            if j_end >= w_end {
                break;
            }
            j += 1;
            j_start = j_end;
            j_end += records[j].duration_us;
        }
        let len = w_end - t;
        acc.push(rate(curve, weighted / len as f64, k)?, len);
        t = w_end;
    }
    Ok(acc.finish())
}

use crate::econ::ChargeAccumulator;
use crate::money::{round_half_even, Nanodollars};
use crate::pricing::{FbpCurve, PricingError};
use crate::telemetry::Sample;

/// Online FBP pricing for one GPU stream.
///
/// Each sample's increment is the change in the rounded running total, so
/// per-sample rounding never drifts: the increments of a stream always sum
/// to the running total rounded half-to-even.
#[derive(Debug, Clone)]
pub struct GpuMeter {
    curve: FbpCurve,
    total: ChargeAccumulator,
    billed: u64,
}

impl GpuMeter {
    pub fn new(curve: FbpCurve) -> Self {
        Self {
            curve,
            total: ChargeAccumulator::new(),
            billed: 0,
        }
    }

    pub fn curve(&self) -> &FbpCurve {
        &self.curve
    }

    /// Running total in fractional nanodollars.
    pub fn exact_total(&self) -> f64 {
        self.total.total()
    }

    pub fn billed(&self) -> Nanodollars {
        Nanodollars(self.billed)
    }

    /// Prices `len_us` microseconds at the sample's bandwidth. Readings at
    /// most one quantum (1 MB/s) above the curve domain are priced at its top.
    pub fn price(&mut self, sample: &Sample, len_us: u64) -> Result<Nanodollars, PricingError> {
        let max = self.curve.domain_max();
        let bw = sample.bw_tbps();
        let bw = if bw > max && bw <= max + 1e-6 { max } else { bw };
        let rate = self.curve.rate_nanos_per_hour(bw)?;
        self.total.push(rate, len_us);
        let rounded = round_half_even(self.total.total()).max(0.0) as u64;
        let inc = rounded.saturating_sub(self.billed);
        self.billed = self.billed.max(rounded);
        Ok(Nanodollars(inc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> FbpCurve {
        FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap()
    }

    #[test]
    fn a100_ceiling_for_one_period() {
        // 5.06e9 nd/h * 50 µs = 70.28 nd
        let mut m = GpuMeter::new(curve());
        let s = Sample::new(2_039_000, 0, 0);
        assert_eq!(m.price(&s, 50).unwrap(), Nanodollars(70));
        assert!((m.exact_total() - 70.277_777).abs() < 1e-5);
    }

    #[test]
    fn increments_sum_to_rounded_total() {
        let mut m = GpuMeter::new(curve());
        let mut sum = 0u64;
        for i in 0..10_000u32 {
            sum += m.price(&Sample::new((i * 337) % 3_350_000, 0, 0), 50).unwrap().0;
        }
        assert_eq!(sum, round_half_even(m.exact_total()) as u64);
        assert_eq!(m.billed().0, sum);
    }

    #[test]
    fn out_of_domain() {
        let mut m = GpuMeter::new(curve());
        assert!(m.price(&Sample::new(3_350_001, 0, 0), 50).is_ok());
        assert!(m.price(&Sample::new(3_360_000, 0, 0), 50).is_err());
    }
}

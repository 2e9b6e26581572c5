use crate::money::charge_nanos;

/// Sums `rate * duration` charges.
///
/// Consecutive pushes at a bit-identical rate are merged by adding their
/// integer durations before multiplying, so splitting a constant-rate span
/// into pieces never changes the result. Distinct spans are combined with
/// Neumaier compensated summation.
#[derive(Debug, Clone, Default)]
pub struct ChargeAccumulator {
    rate: f64,
    micros: u64,
    sum: f64,
    compensation: f64,
}

impl ChargeAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `micros` microseconds at `rate` nanodollars per hour.
    pub fn push(&mut self, rate: f64, micros: u64) {
        if micros == 0 {
            return;
        }
        if self.micros > 0 && rate.to_bits() == self.rate.to_bits() {
            self.micros += micros;
        } else {
            self.flush();
            self.rate = rate;
            self.micros = micros;
        }
    }

    fn flush(&mut self) {
        if self.micros == 0 {
            return;
        }
        let x = charge_nanos(self.rate, self.micros);
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
        self.micros = 0;
    }

    /// Running total without consuming the accumulator.
    pub fn total(&self) -> f64 {
        let pending = if self.micros > 0 {
            charge_nanos(self.rate, self.micros)
        } else {
            0.0
        };
        let t = self.sum + pending;
        let c = if self.sum.abs() >= pending.abs() {
            (self.sum - t) + pending
        } else {
            (pending - t) + self.sum
        };
        t + (self.compensation + c)
    }

    /// Total in (fractional) nanodollars.
    pub fn finish(mut self) -> f64 {
        self.flush();
        self.sum + self.compensation
    }
}

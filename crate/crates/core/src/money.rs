//! Integer money.
//!
//! Charges are carried as whole nanodollars. Conversions from floating-point
//! dollars round half-to-even.

use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Nanodollars in one dollar.
pub const NANOS_PER_DOLLAR: f64 = 1e9;
/// Microseconds in one hour.
pub const MICROS_PER_HOUR: f64 = 3.6e9;

/// An amount of money in whole nanodollars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nanodollars(pub u64);

impl Nanodollars {
    pub const ZERO: Self = Self(0);

    /// Rounds a dollar amount to the nearest nanodollar (ties to even).
    /// Negative and non-finite inputs saturate to zero / `u64::MAX`.
    pub fn from_dollars(dollars: f64) -> Self {
        Self::from_nanos_f64(dollars * NANOS_PER_DOLLAR)
    }

    /// Rounds a fractional nanodollar amount half-to-even.
    pub fn from_nanos_f64(nanos: f64) -> Self {
        let r = round_half_even(nanos);
        if r.is_nan() || r <= 0.0 {
            Self(0)
        } else if r >= u64::MAX as f64 {
            Self(u64::MAX)
        } else {
            Self(r as u64)
        }
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / NANOS_PER_DOLLAR
    }

    pub fn checked_add(self, rhs: Self) -> Option<Self> {
        self.0.checked_add(rhs.0).map(Self)
    }
}

impl Add for Nanodollars {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for Nanodollars {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sum for Nanodollars {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

impl fmt::Display for Nanodollars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} n$", self.0)
    }
}

/// Round-half-to-even on `f64`, independent of the FP environment.
pub fn round_half_even(x: f64) -> f64 {
    let r = libm::round(x);
    if libm::fabs(x - libm::trunc(x)) == 0.5 {
        // exact tie: pick the even neighbour
        2.0 * libm::round(x / 2.0)
    } else {
        r
    }
}

/// Charge in fractional nanodollars for running at `rate_nd_per_hour` for
/// `micros` microseconds.
#[inline]
pub fn charge_nanos(rate_nd_per_hour: f64, micros: u64) -> f64 {
    rate_nd_per_hour * micros as f64 / MICROS_PER_HOUR
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_ties() {
        assert_eq!(round_half_even(0.5), 0.0);
        assert_eq!(round_half_even(1.5), 2.0);
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(-2.5), -2.0);
        assert_eq!(round_half_even(70.2777), 70.0);
        assert_eq!(round_half_even(70.6), 71.0);
    }

    #[test]
    fn dollars_round_trip_on_table_prices() {
        for d in [1.46, 2.48, 5.06, 11.06, 4.0, 15.0] {
            let n = Nanodollars::from_dollars(d);
            assert_eq!(n.as_dollars(), d);
        }
        assert_eq!(Nanodollars::from_dollars(5.06).0, 5_060_000_000);
    }

    #[test]
    fn negative_saturates() {
        assert_eq!(Nanodollars::from_dollars(-1.0), Nanodollars::ZERO);
    }

    #[test]
    fn per_sample_increment() {
        // $5.06/h for 50 µs
        let nanos = charge_nanos(5.06e9, 50);
        assert!((nanos - 70.277_777).abs() < 1e-5);
        assert_eq!(Nanodollars::from_nanos_f64(nanos).0, 70);
    }
}

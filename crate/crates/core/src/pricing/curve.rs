use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::PricingError;
use crate::money::Nanodollars;

/// One anchor of a pricing curve: the hourly price `cap` charged at
/// bandwidth `bw_upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Anchor {
    bw_upper: f64,
    cap: Nanodollars,
}

/// A continuous, piecewise linear hourly price as a function of bandwidth.
///
/// Anchors are `(0, base)` followed by one `(bw_upper, cap)` point per
/// segment. Prices are held as integer nanodollars per hour, so evaluation
/// at an anchor returns the anchor exactly and appending a segment never
/// perturbs the existing ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveDef", into = "CurveDef")]
pub struct FbpCurve {
    base: Nanodollars,
    anchors: Vec<Anchor>,
}

/// File representation of a curve, prices in dollars per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDef {
    pub base: f64,
    pub segments: Vec<SegmentDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentDef {
    pub bw_tbps: f64,
    pub cap: f64,
}

impl FbpCurve {
    /// Builds a curve from a base price and `(bw_upper, cap)` segments, all
    /// prices in dollars per hour.
    pub fn build(base: f64, segments: &[(f64, f64)]) -> Result<Self, PricingError> {
        let curve = Self::new_unchecked(base, segments);
        curve.check()?;
        Ok(curve)
    }

    /// Builds a curve without checking the desiderata. Evaluation still
    /// works; use [`super::validate_desiderata`] to audit the result.
    pub fn new_unchecked(base: f64, segments: &[(f64, f64)]) -> Self {
        Self {
            base: Nanodollars::from_dollars(base),
            anchors: segments
                .iter()
                .map(|&(bw_upper, cap)| Anchor {
                    bw_upper,
                    cap: Nanodollars::from_dollars(cap),
                })
                .collect(),
        }
    }

    fn check(&self) -> Result<(), PricingError> {
        if self.base == Nanodollars::ZERO {
            return Err(PricingError::NonMonotone("base price must be positive".into()));
        }
        if self.anchors.is_empty() {
            return Err(PricingError::BadBreakpoints("at least one segment is required".into()));
        }
        let mut prev_bw = 0.0;
        let mut prev_cap = self.base;
        for (i, a) in self.anchors.iter().enumerate() {
            if !(a.bw_upper.is_finite() && a.bw_upper > prev_bw) {
                return Err(PricingError::BadBreakpoints(format!(
                    "segment {i} ends at {} TB/s, not above {prev_bw}",
                    a.bw_upper
                )));
            }
            if a.cap < prev_cap {
                return Err(PricingError::NonMonotone(format!(
                    "segment {i} cap {} is below the previous price {}",
                    a.cap.as_dollars(),
                    prev_cap.as_dollars()
                )));
            }
            prev_bw = a.bw_upper;
            prev_cap = a.cap;
        }
        Ok(())
    }

    /// Appends a segment ending at `bw_upper` with price `cap` ($/h).
    /// Prices on the existing domain are unchanged.
    pub fn extend(&self, bw_upper: f64, cap: f64) -> Result<Self, PricingError> {
        let mut next = self.clone();
        next.anchors.push(Anchor {
            bw_upper,
            cap: Nanodollars::from_dollars(cap),
        });
        next.check()?;
        Ok(next)
    }

    pub fn base(&self) -> Nanodollars {
        self.base
    }

    /// Upper end of the bandwidth domain.
    pub fn domain_max(&self) -> f64 {
        self.anchors.last().map_or(0.0, |a| a.bw_upper)
    }

    /// `(bw_upper, cap)` pairs, caps in nanodollars per hour.
    pub fn segments(&self) -> impl Iterator<Item = (f64, Nanodollars)> + '_ {
        self.anchors.iter().map(|a| (a.bw_upper, a.cap))
    }

    /// All anchor points including `(0, base)`.
    pub fn anchors(&self) -> impl Iterator<Item = (f64, Nanodollars)> + '_ {
        core::iter::once((0.0, self.base)).chain(self.segments())
    }

    /// Hourly rate at bandwidth `bw`, in nanodollars per hour.
    pub fn rate_nanos_per_hour(&self, bw: f64) -> Result<f64, PricingError> {
        let max = self.domain_max();
        if !(bw >= 0.0 && bw <= max) {
            return Err(PricingError::OutOfDomain { bw, max });
        }
        let mut x0 = 0.0;
        let mut y0 = self.base.0 as f64;
        for a in &self.anchors {
            let y1 = a.cap.0 as f64;
            if bw == a.bw_upper {
                return Ok(y1);
            }
            if bw < a.bw_upper {
                let t = (bw - x0) / (a.bw_upper - x0);
                return Ok(y0 + (y1 - y0) * t);
            }
            x0 = a.bw_upper;
            y0 = y1;
        }
        unreachable!("bw is within the domain")
    }

    /// Hourly price at bandwidth `bw`, in dollars per hour.
    pub fn price_per_hour(&self, bw: f64) -> Result<f64, PricingError> {
        Ok(self.rate_nanos_per_hour(bw)? / crate::money::NANOS_PER_DOLLAR)
    }

    /// Slope of each segment in nanodollars per hour per TB/s.
    pub fn slopes(&self) -> Vec<f64> {
        let pts: Vec<_> = self.anchors().collect();
        pts.windows(2)
            .map(|w| (w[1].1 .0 as f64 - w[0].1 .0 as f64) / (w[1].0 - w[0].0))
            .collect()
    }

    /// Whether every anchor is at or above the previous one.
    pub fn is_monotone(&self) -> bool {
        let pts: Vec<_> = self.anchors().collect();
        pts.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    /// Convex iff segment slopes never decrease.
    pub fn is_convex(&self) -> bool {
        self.slopes().windows(2).all(|w| w[1] >= w[0])
    }

    /// Every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, PricingError> {
        let segs: Vec<_> = self
            .segments()
            .map(|(bw, cap)| (bw, cap.as_dollars() * factor))
            .collect();
        Self::build(self.base.as_dollars() * factor, &segs)
    }

    pub fn to_def(&self) -> CurveDef {
        CurveDef {
            base: self.base.as_dollars(),
            segments: self
                .segments()
                .map(|(bw, cap)| SegmentDef {
                    bw_tbps: bw,
                    cap: cap.as_dollars(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CurveDef> for FbpCurve {
    type Error = PricingError;
    fn try_from(def: CurveDef) -> Result<Self, Self::Error> {
        let segs: Vec<_> = def.segments.iter().map(|s| (s.bw_tbps, s.cap)).collect();
        Self::build(def.base, &segs)
    }
}

impl From<FbpCurve> for CurveDef {
    fn from(c: FbpCurve) -> Self {
        c.to_def()
    }
}

/// Renders in the `(base, M_1, M_2, ...)` notation, e.g. `(4, 5.06, 15)`.
impl fmt::Display for FbpCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.base.as_dollars())?;
        for (_, cap) in self.segments() {
            write!(f, ", {}", cap.as_dollars())?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn reference() -> FbpCurve {
        FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap()
    }

    #[test]
    fn build_examples() {
        assert_eq!(reference().to_string(), "(4, 5.06, 15)");
        assert!(FbpCurve::build(4.0, &[(2.039, 4.0)]).is_ok());
        assert!(matches!(
            FbpCurve::build(4.0, &[(2.039, 3.0)]),
            Err(PricingError::NonMonotone(_))
        ));
        assert!(matches!(
            FbpCurve::build(4.0, &[(2.039, 5.0), (2.039, 6.0)]),
            Err(PricingError::BadBreakpoints(_))
        ));
        assert!(matches!(
            FbpCurve::build(4.0, &[]),
            Err(PricingError::BadBreakpoints(_))
        ));
    }

    #[test]
    fn evaluation_examples() {
        let c = reference();
        assert_eq!(c.price_per_hour(0.0).unwrap(), 4.0);
        assert_eq!(c.price_per_hour(2.039).unwrap(), 5.06);
        assert_eq!(c.price_per_hour(3.35).unwrap(), 15.0);
        // midpoint of the first segment: (4 + 5.06) / 2
        assert!((c.price_per_hour(1.0195).unwrap() - 4.53).abs() < 1e-12);
        assert!(matches!(c.price_per_hour(4.0), Err(PricingError::OutOfDomain { .. })));
        assert!(c.price_per_hour(-0.1).is_err());
        assert!(c.price_per_hour(f64::NAN).is_err());
    }

    #[test]
    fn extend_examples() {
        let c = reference();
        let b = c.extend(8.0, 30.0).unwrap();
        assert_eq!(b.to_string(), "(4, 5.06, 15, 30)");
        assert_eq!(b.price_per_hour(8.0).unwrap(), 30.0);
        assert!(c.extend(8.0, 15.0).is_ok());
        assert!(matches!(c.extend(3.0, 30.0), Err(PricingError::BadBreakpoints(_))));
        assert!(matches!(c.extend(8.0, 14.0), Err(PricingError::NonMonotone(_))));
    }

    #[test]
    fn convexity() {
        assert!(reference().is_convex());
        let concave = FbpCurve::build(4.0, &[(2.0, 10.0), (3.0, 11.0)]).unwrap();
        assert!(!concave.is_convex());
    }

    #[test]
    fn unchecked_curve_reports_non_monotone() {
        let c = FbpCurve::new_unchecked(4.0, &[(2.0, 6.0), (3.0, 5.0)]);
        assert!(!c.is_monotone());
        assert!(c.price_per_hour(2.5).is_ok());
    }
}

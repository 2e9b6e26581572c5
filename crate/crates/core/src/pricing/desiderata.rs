use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{FbpCurve, GpuCatalog};

/// Structural audit of a pricing curve against a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiderataReport {
    pub monotone: bool,
    pub convex: bool,
    pub caps_respected: bool,
    /// Share of jobs charged strictly more than under the reference TBP,
    /// when a job set was supplied.
    pub f_percent: Option<f64>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl DesiderataReport {
    pub fn is_valid(&self) -> bool {
        self.monotone && self.caps_respected
    }
}

const ALIGN_TOL: f64 = 1e-9;

/// Checks monotonicity and per-GPU price caps.
///
/// The cap that applies to a GPU is the cap of the segment whose upper
/// breakpoint sits at the GPU's peak bandwidth; when no breakpoint lines up,
/// the segment containing the peak is used and a warning is recorded.
pub fn validate_desiderata(curve: &FbpCurve, catalog: &GpuCatalog) -> DesiderataReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();

    let anchors: Vec<_> = curve.anchors().collect();
    let mut monotone = true;
    for (i, w) in anchors.windows(2).enumerate() {
        if w[1].1 < w[0].1 {
            monotone = false;
            violations.push(format!(
                "segment {i} decreases from ${} at {} TB/s to ${} at {} TB/s",
                w[0].1.as_dollars(),
                w[0].0,
                w[1].1.as_dollars(),
                w[1].0
            ));
        }
        if w[1].0 <= w[0].0 {
            monotone = false;
            violations.push(format!("breakpoint {} TB/s does not increase", w[1].0));
        }
    }

    let mut caps_respected = true;
    for gpu in catalog.iter() {
        let Some((bw_upper, cap)) = curve.segments().find(|&(bw, _)| bw >= gpu.bw_max - ALIGN_TOL) else {
            caps_respected = false;
            violations.push(format!(
                "{} peak bandwidth {} TB/s is beyond the curve domain {} TB/s",
                gpu.name,
                gpu.bw_max,
                curve.domain_max()
            ));
            continue;
        };
        if (bw_upper - gpu.bw_max).abs() > ALIGN_TOL {
            warnings.push(format!(
                "{} peak bandwidth {} TB/s does not align with a breakpoint (next is {} TB/s)",
                gpu.name, gpu.bw_max, bw_upper
            ));
        }
        match curve.rate_nanos_per_hour(gpu.bw_max.min(curve.domain_max())) {
            Ok(rate) if rate <= cap.0 as f64 => {}
            Ok(rate) => {
                caps_respected = false;
                violations.push(format!(
                    "price at {} peak (${}/h) exceeds its cap ${}/h",
                    gpu.name,
                    rate / 1e9,
                    cap.as_dollars()
                ));
            }
            Err(e) => {
                caps_respected = false;
                violations.push(format!("{}: {e}", gpu.name));
            }
        }
    }
    for (bw, _) in curve.segments() {
        if !catalog.iter().any(|g| (g.bw_max - bw).abs() <= ALIGN_TOL) {
            warnings.push(format!("breakpoint {bw} TB/s matches no catalog GPU"));
        }
    }

    DesiderataReport {
        monotone,
        convex: curve.is_convex(),
        caps_respected,
        f_percent: None,
        violations,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_gpu() -> GpuCatalog {
        GpuCatalog::reference().subset(&["A100", "H100"]).unwrap()
    }

    #[test]
    fn reference_curve_is_clean() {
        let c = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let r = validate_desiderata(&c, &two_gpu());
        assert!(r.monotone && r.caps_respected && r.convex);
        assert!(r.violations.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn decreasing_segment_is_reported() {
        let c = FbpCurve::new_unchecked(4.0, &[(2.039, 6.0), (3.35, 5.0)]);
        let r = validate_desiderata(&c, &two_gpu());
        assert!(!r.monotone);
        assert!(!r.violations.is_empty());
    }

    #[test]
    fn misaligned_breakpoints_warn_only() {
        let c = FbpCurve::build(4.0, &[(2.0, 5.06), (3.35, 15.0)]).unwrap();
        let r = validate_desiderata(&c, &two_gpu());
        assert!(r.is_valid());
        assert!(r.violations.is_empty());
        assert!(r.warnings.iter().any(|w| w.contains("A100")));
        assert!(r.warnings.iter().any(|w| w.contains("2 TB/s")));
    }

    #[test]
    fn gpu_beyond_domain_violates() {
        let c = FbpCurve::build(4.0, &[(2.039, 5.06)]).unwrap();
        let r = validate_desiderata(&c, &two_gpu());
        assert!(!r.caps_respected);
    }
}

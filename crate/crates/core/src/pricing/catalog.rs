use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::PricingError;
use crate::money::MICROS_PER_HOUR;

/// Fraction of peak bandwidth / compute a kernel can realistically reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub bw: f64,
    pub compute: f64,
}

impl Default for Efficiency {
    fn default() -> Self {
        Self { bw: 0.8, compute: 0.8 }
    }
}

/// A rentable GPU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuModel {
    pub name: String,
    /// Peak memory bandwidth, TB/s.
    #[serde(rename = "bw_tbps")]
    pub bw_max: f64,
    /// Peak compute, TFLOPS.
    #[serde(rename = "compute_tflops")]
    pub compute_peak: f64,
    /// Time-based price, dollars per hour.
    #[serde(rename = "price_per_hour")]
    pub ppt: f64,
    #[serde(default)]
    pub efficiency: Efficiency,
}

impl GpuModel {
    pub fn new(name: &str, bw_max: f64, compute_peak: f64, ppt: f64) -> Result<Self, PricingError> {
        let gpu = Self {
            name: name.to_string(),
            bw_max,
            compute_peak,
            ppt,
            efficiency: Efficiency::default(),
        };
        gpu.validate()?;
        Ok(gpu)
    }

    pub fn with_efficiency(mut self, efficiency: Efficiency) -> Result<Self, PricingError> {
        self.efficiency = efficiency;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        let bad = |reason| {
            Err(PricingError::InvalidGpu {
                name: self.name.clone(),
                reason,
            })
        };
        if self.name.is_empty() {
            return bad("empty name");
        }
        if !(self.bw_max.is_finite() && self.bw_max > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.compute_peak.is_finite() && self.compute_peak > 0.0) {
            return bad("compute must be positive");
        }
        if !(self.ppt.is_finite() && self.ppt > 0.0) {
            return bad("hourly price must be positive");
        }
        let eff_ok = |e: f64| e > 0.0 && e <= 1.0;
        if !eff_ok(self.efficiency.bw) || !eff_ok(self.efficiency.compute) {
            return bad("efficiency factors must lie in (0, 1]");
        }
        Ok(())
    }

    /// Bandwidth per dollar-hour.
    pub fn bw_price_ratio(&self) -> f64 {
        self.bw_max / self.ppt
    }

    /// Compute (in hundreds of TFLOPS) per dollar-hour.
    pub fn compute_price_ratio(&self) -> f64 {
        self.compute_peak / 100.0 / self.ppt
    }
}

/// GPU models offered by a provider, strictly ordered by peak bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GpuModel>", into = "Vec<GpuModel>")]
pub struct GpuCatalog {
    models: Vec<GpuModel>,
}

impl GpuCatalog {
    pub fn new(models: Vec<GpuModel>) -> Result<Self, PricingError> {
        for (i, m) in models.iter().enumerate() {
            m.validate()?;
            if models[..i].iter().any(|o| o.name == m.name) {
                return Err(PricingError::DuplicateGpu(m.name.clone()));
            }
            if i > 0 && models[i - 1].bw_max >= m.bw_max {
                return Err(PricingError::UnsortedCatalog(m.name.clone()));
            }
        }
        Ok(Self { models })
    }

    /// P100, V100, A100 and H100 with Google Cloud on-demand prices
    /// (March 2025).
    pub fn reference() -> Self {
        let rows = [
            ("P100", 0.752, 18.7, 1.46),
            ("V100", 0.9, 125.0, 2.48),
            ("A100", 2.039, 312.0, 5.06),
            ("H100", 3.35, 990.0, 11.06),
        ];
        let models = rows
            .iter()
            .map(|&(n, bw, c, p)| GpuModel::new(n, bw, c, p).expect("reference rows are valid"))
            .collect();
        Self::new(models).expect("reference catalog is ordered")
    }

    /// Keeps only the named models, in catalog order.
    pub fn subset(&self, names: &[&str]) -> Result<Self, PricingError> {
        for n in names {
            self.get(n)?;
        }
        Self::new(
            self.models
                .iter()
                .filter(|m| names.contains(&m.name.as_str()))
                .cloned()
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Result<&GpuModel, PricingError> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| PricingError::UnknownGpu(name.to_string()))
    }

    pub fn models(&self) -> &[GpuModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, GpuModel> {
        self.models.iter()
    }
}

impl TryFrom<Vec<GpuModel>> for GpuCatalog {
    type Error = PricingError;
    fn try_from(models: Vec<GpuModel>) -> Result<Self, Self::Error> {
        Self::new(models)
    }
}

impl From<GpuCatalog> for Vec<GpuModel> {
    fn from(c: GpuCatalog) -> Self {
        c.models
    }
}

/// TBP cost of running `hours` on `gpu`, in dollars.
pub fn tbp_cost(gpu: &GpuModel, hours: f64) -> f64 {
    gpu.ppt * hours
}

/// TBP cost of running `micros` microseconds on `gpu`, in dollars.
pub fn tbp_cost_micros(gpu: &GpuModel, micros: u64) -> f64 {
    gpu.ppt * micros as f64 / MICROS_PER_HOUR
}

/// Capability per unit price (`c / p`).
pub fn capability_price_ratio(capability: f64, price: f64) -> Result<f64, PricingError> {
    if !(price.is_finite() && price > 0.0) {
        return Err(PricingError::ZeroPrice);
    }
    Ok(capability / price)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tbp_examples() {
        let cat = GpuCatalog::reference();
        let h100 = cat.get("H100").unwrap();
        let a100 = cat.get("A100").unwrap();
        assert_eq!(tbp_cost(h100, 1.0), 11.06);
        assert_eq!(tbp_cost(a100, 0.0), 0.0);
        assert!((tbp_cost(a100, 2.0) - 10.12).abs() < 1e-12);
        assert!((tbp_cost_micros(h100, 3_600_000_000) - 11.06).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        assert!((capability_price_ratio(3.35, 11.06).unwrap() - 0.302).abs() < 1e-3);
        assert!((capability_price_ratio(0.752, 1.46).unwrap() - 0.515).abs() < 1e-3);
        assert!((capability_price_ratio(9.90, 11.06).unwrap() - 0.895).abs() < 1e-3);
        assert_eq!(capability_price_ratio(1.0, 0.0), Err(PricingError::ZeroPrice));
    }

    #[test]
    fn catalog_rejects_ties_and_duplicates() {
        let a = GpuModel::new("A", 1.0, 1.0, 1.0).unwrap();
        let b = GpuModel::new("B", 1.0, 2.0, 2.0).unwrap();
        assert!(matches!(
            GpuCatalog::new(alloc::vec![a.clone(), b]),
            Err(PricingError::UnsortedCatalog(_))
        ));
        assert!(matches!(
            GpuCatalog::new(alloc::vec![a.clone(), a]),
            Err(PricingError::DuplicateGpu(_))
        ));
    }

    #[test]
    fn gpu_rejects_nonpositive_fields() {
        assert!(GpuModel::new("X", 0.0, 1.0, 1.0).is_err());
        assert!(GpuModel::new("X", 1.0, -1.0, 1.0).is_err());
        assert!(GpuModel::new("X", 1.0, 1.0, 0.0).is_err());
        assert!(GpuModel::new("", 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let cat = GpuCatalog::reference().subset(&["H100", "A100"]).unwrap();
        let names: Vec<_> = cat.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["A100", "H100"]);
        assert!(GpuCatalog::reference().subset(&["B200"]).is_err());
    }
}

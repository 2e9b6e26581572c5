use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Trace, UtilizationRecord, WorkloadError};
use crate::pricing::GpuModel;

/// A bounded scalar distribution for synthetic traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Const { value: f64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Mixture { components: Vec<Component> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub dist: Box<Dist>,
}

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Const { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Uniform { lo, hi }
    }

    pub fn log_uniform(lo: f64, hi: f64) -> Self {
        Dist::LogUniform { lo, hi }
    }

    pub fn mixture(parts: impl IntoIterator<Item = (f64, Dist)>) -> Self {
        Dist::Mixture {
            components: parts
                .into_iter()
                .map(|(weight, dist)| Component {
                    weight,
                    dist: Box::new(dist),
                })
                .collect(),
        }
    }

    /// Closed support `[min, max]`, or an error if the parameters are invalid.
    pub fn bounds(&self) -> Result<(f64, f64), WorkloadError> {
        let bad = |msg: &str| Err(WorkloadError::BadSpec(format!("{msg}: {self:?}")));
        match *self {
            Dist::Const { value } if value.is_finite() => Ok((value, value)),
            Dist::Const { .. } => bad("non-finite constant"),
            Dist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo <= hi => Ok((lo, hi)),
            Dist::Uniform { .. } => bad("uniform needs finite lo <= hi"),
            Dist::LogUniform { lo, hi } if lo > 0.0 && hi.is_finite() && lo <= hi => Ok((lo, hi)),
            Dist::LogUniform { .. } => bad("log-uniform needs 0 < lo <= hi"),
            Dist::Mixture { ref components } => {
                if components.is_empty()
                    || components.iter().any(|c| !(c.weight >= 0.0 && c.weight.is_finite()))
                    || components.iter().map(|c| c.weight).sum::<f64>() <= 0.0
                {
                    return bad("mixture needs non-negative weights with a positive sum");
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in components {
                    let (l, h) = c.dist.bounds()?;
                    lo = lo.min(l);
                    hi = hi.max(h);
                }
                Ok((lo, hi))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Const { value } => *value,
            Dist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Dist::LogUniform { lo, hi } => {
                let (a, b) = (libm::log(*lo), libm::log(*hi));
                libm::exp(a + (b - a) * rng.random::<f64>()).clamp(*lo, *hi)
            }
            Dist::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut pick = rng.random::<f64>() * total;
                for c in components {
                    if pick < c.weight {
                        return c.dist.sample(rng);
                    }
                    pick -= c.weight;
                }
                components.last().expect("validated non-empty").dist.sample(rng)
            }
        }
    }
}

fn default_compute_util() -> Dist {
    Dist::constant(0.5)
}

/// Parameters for [`gen_synthetic_trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub duration_us: Dist,
    /// Bandwidth in TB/s.
    pub bw: Dist,
    #[serde(default = "default_compute_util")]
    pub compute_util: Dist,
    /// Defaults to `bw / bw_max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram_util: Option<Dist>,
}

impl SyntheticSpec {
    pub fn new(n_records: usize, duration_us: Dist, bw: Dist) -> Self {
        Self {
            n_records,
            duration_us,
            bw,
            compute_util: default_compute_util(),
            dram_util: None,
        }
    }
}

/// Draws `n_records` independent records. Identical `(spec, gpu, seed)`
/// always yield the identical trace.
pub fn gen_synthetic_trace(spec: &SyntheticSpec, gpu: &GpuModel, seed: u64) -> Result<Trace, WorkloadError> {
    if spec.n_records == 0 {
        return Err(WorkloadError::BadSpec("n_records must be positive".into()));
    }
    let (dlo, _) = spec.duration_us.bounds()?;
    if dlo <= 0.0 {
        return Err(WorkloadError::BadSpec("durations must be positive".into()));
    }
    let (blo, bhi) = spec.bw.bounds()?;
    if blo < 0.0 || bhi > gpu.bw_max {
        return Err(WorkloadError::BadSpec(format!(
            "bandwidth support [{blo}, {bhi}] is outside [0, {}]",
            gpu.bw_max
        )));
    }
    for d in core::iter::once(&spec.compute_util).chain(spec.dram_util.as_ref()) {
        let (lo, hi) = d.bounds()?;
        if lo < 0.0 || hi > 1.0 {
            return Err(WorkloadError::BadSpec("utilizations must lie in [0, 1]".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..spec.n_records)
        .map(|_| {
            let duration_us = (libm::round(spec.duration_us.sample(&mut rng)) as u64).max(1);
            let bw = spec.bw.sample(&mut rng);
            let compute_util = spec.compute_util.sample(&mut rng);
            let dram_util = match &spec.dram_util {
                Some(d) => d.sample(&mut rng),
                None => (bw / gpu.bw_max).min(1.0),
            };
            UtilizationRecord::new(duration_us, bw, compute_util, dram_util)
        })
        .collect();
    Trace::new(gpu, records, None)
}

/// Hardware-independent description of one kernel: bytes it moves, flops it
/// executes and a fixed latency floor. Realizing it on a GPU through the
/// same roofline as the decode model gives per-GPU records that stay
/// consistent across the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelProfile {
    pub bytes: f64,
    pub flops: f64,
    pub floor_us: f64,
}

impl KernelProfile {
    pub fn realize(&self, gpu: &GpuModel) -> UtilizationRecord {
        let bw_eff = gpu.bw_max * gpu.efficiency.bw * 1e12;
        let comp_eff = gpu.compute_peak * gpu.efficiency.compute * 1e12;
        let secs = (self.bytes / bw_eff).max(self.flops / comp_eff);
        let duration_us = (libm::ceil(secs * 1e6).max(libm::ceil(self.floor_us)) as u64).max(1);
        let dur_s = duration_us as f64 * 1e-6;
        let bw = (self.bytes / dur_s / 1e12).min(gpu.bw_max * gpu.efficiency.bw);
        UtilizationRecord::new(
            duration_us,
            bw,
            (self.flops / dur_s / (gpu.compute_peak * 1e12)).min(1.0),
            (bw / gpu.bw_max).min(1.0),
        )
    }
}

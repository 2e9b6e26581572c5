//! Deterministic TorchBench-like workload used by tests and shipped as the
//! default fixture set.
//!
//! Each application is a sequence of kernels described by hardware-neutral
//! [`KernelProfile`]s, realized on every catalog GPU. Kernel lengths span a
//! few microseconds to a millisecond and most kernels are light on
//! bandwidth, with a tail of bandwidth-heavy ones.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Dist, JobDistribution, JobEntry, JobSpec, KernelProfile, Trace, WorkloadError};
use crate::pricing::GpuCatalog;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    pub apps: usize,
    pub kernels_per_app: usize,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            apps: 8,
            kernels_per_app: 2000,
            seed: 2025,
        }
    }
}

fn kernel_time_us() -> Dist {
    Dist::mixture([
        (0.65, Dist::log_uniform(2.0, 60.0)),
        (0.35, Dist::log_uniform(60.0, 1000.0)),
    ])
}

/// Fraction of the reference GPU's usable bandwidth a kernel draws.
fn bw_fraction() -> Dist {
    Dist::mixture([
        (0.6, Dist::uniform(0.01, 0.2)),
        (0.3, Dist::uniform(0.2, 0.5)),
        (0.1, Dist::uniform(0.5, 1.0)),
    ])
}

/// Kernel profiles of application `app`, calibrated on the catalog's
/// highest-bandwidth GPU.
pub fn app_kernels(catalog: &GpuCatalog, params: &FixtureParams, app: usize) -> Vec<KernelProfile> {
    let reference = catalog.models().last().expect("catalog is non-empty");
    let bw_eff = reference.bw_max * reference.efficiency.bw * 1e12;
    let comp_eff = reference.compute_peak * reference.efficiency.compute * 1e12;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, app as u64));
    let (time, frac, comp) = (kernel_time_us(), bw_fraction(), Dist::uniform(0.02, 1.0));
    (0..params.kernels_per_app)
        .map(|_| {
            let us = time.sample(&mut rng);
            let secs = us * 1e-6;
            KernelProfile {
                bytes: frac.sample(&mut rng) * bw_eff * secs,
                flops: comp.sample(&mut rng) * comp_eff * secs,
                floor_us: us,
            }
        })
        .collect()
}

/// Equal-weight distribution over `params.apps` applications, each bound
/// to every catalog GPU.
pub fn torchbench_like(catalog: &GpuCatalog, params: &FixtureParams) -> Result<JobDistribution, WorkloadError> {
    if catalog.is_empty() || params.apps == 0 || params.kernels_per_app == 0 {
        return Err(WorkloadError::BadSpec("fixture needs GPUs, apps and kernels".into()));
    }
    let entries = (0..params.apps)
        .map(|app| {
            let kernels = app_kernels(catalog, params, app);
            let mut traces = BTreeMap::new();
            for gpu in catalog.iter() {
                let records = kernels
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p.realize(gpu).with_label(format!("k{k}")))
                    .collect();
                traces.insert(gpu.name.clone(), Trace::new(gpu, records, None)?);
            }
            Ok(JobEntry::new(format!("app{app:02}"), JobSpec::Traces { traces }, 1.0))
        })
        .collect::<Result<Vec<_>, WorkloadError>>()?;
    JobDistribution::new(entries)
}

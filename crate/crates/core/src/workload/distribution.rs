use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{llm_decode_trace, LlmModelConfig, Trace, WorkloadError};
use crate::pricing::{GpuCatalog, GpuModel};

/// What a job is: recorded traces per GPU, or an LLM decode to be modelled.
#[derive(Debug, Clone, PartialEq)]
pub enum JobSpec {
    Traces {
        /// Keyed by GPU model name.
        traces: BTreeMap<String, Trace>,
    },
    LlmDecode {
        model: LlmModelConfig,
        batch: u32,
        context: u64,
        output_tokens: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobEntry {
    pub name: String,
    pub spec: JobSpec,
    pub weight: f64,
}

impl JobEntry {
    pub fn new(name: impl Into<String>, spec: JobSpec, weight: f64) -> Self {
        Self {
            name: name.into(),
            spec,
            weight,
        }
    }

    /// This job's trace on `gpu`.
    pub fn trace_for(&self, gpu: &GpuModel) -> Result<Trace, WorkloadError> {
        match &self.spec {
            JobSpec::Traces { traces } => {
                traces
                    .get(&gpu.name)
                    .cloned()
                    .ok_or_else(|| WorkloadError::MissingTraceBinding {
                        job: self.name.clone(),
                        gpu: gpu.name.clone(),
                    })
            }
            JobSpec::LlmDecode {
                model,
                batch,
                context,
                output_tokens,
            } => llm_decode_trace(
                model,
                gpu,
                *batch,
                *context,
                *output_tokens,
                gpu.efficiency.bw,
                gpu.efficiency.compute,
            ),
        }
    }
}

/// A job together with its trace on every catalog GPU, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedJob {
    pub name: String,
    pub traces: Vec<Trace>,
}

/// Weighted set of jobs. Sampling probability is proportional to weight.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDistribution {
    entries: Vec<JobEntry>,
}

impl JobDistribution {
    pub fn new(entries: Vec<JobEntry>) -> Result<Self, WorkloadError> {
        if entries.is_empty() {
            return Err(WorkloadError::BadDistribution("no entries".into()));
        }
        if let Some(e) = entries.iter().find(|e| !(e.weight.is_finite() && e.weight >= 0.0)) {
            return Err(WorkloadError::BadDistribution(format!(
                "entry `{}` has invalid weight {}",
                e.name, e.weight
            )));
        }
        if entries.iter().map(|e| e.weight).sum::<f64>() <= 0.0 {
            return Err(WorkloadError::BadDistribution("weights sum to zero".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[JobEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Materializes every entry on every catalog GPU. Fails with
    /// `MissingTraceBinding` naming the first job lacking a GPU.
    pub fn resolve(&self, catalog: &GpuCatalog) -> Result<Vec<ResolvedJob>, WorkloadError> {
        self.entries
            .iter()
            .map(|e| {
                let traces = catalog.iter().map(|g| e.trace_for(g)).collect::<Result<Vec<_>, _>>()?;
                Ok(ResolvedJob {
                    name: e.name.clone(),
                    traces,
                })
            })
            .collect()
    }
}

/// Seeded categorical sampler over a distribution's entries.
#[derive(Debug, Clone)]
pub struct JobSampler {
    rng: ChaCha8Rng,
    index: WeightedIndex<f64>,
}

impl JobSampler {
    pub fn new(dist: &JobDistribution, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: WeightedIndex::new(dist.entries.iter().map(|e| e.weight))
                .expect("distribution weights are validated"),
        }
    }

    pub fn next_index(&mut self) -> usize {
        self.index.sample(&mut self.rng)
    }
}

/// Draws one entry, advancing `rng`.
pub fn sample_job<'a>(dist: &'a JobDistribution, rng: &mut ChaCha8Rng) -> &'a JobEntry {
    let index = WeightedIndex::new(dist.entries.iter().map(|e| e.weight)).expect("distribution weights are validated");
    &dist.entries[index.sample(rng)]
}

/// Independent seed for stream `index` under `master` (SplitMix64 mix).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

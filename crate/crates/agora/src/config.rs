//! JSON configuration files and their resolution into core types.
//!
//! Relative paths inside a config file are resolved against the directory
//! holding that file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use agora_core::econ::DEFAULT_N_JOBS;
use agora_core::workload::fixture::{torchbench_like, FixtureParams};
use agora_core::workload::{gen_synthetic_trace, JobDistribution, JobEntry, JobSpec, LlmModelConfig, SyntheticSpec};
use agora_core::{FbpCurve, GpuCatalog, GpuModel, Trace};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AgoraError, Result};
use crate::trace_io::load_trace;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| AgoraError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| AgoraError::Config(format!("{}: {e}", path.display())))
}

pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A value given inline or as a path to a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    /// The value, and the directory its own relative paths resolve against.
    pub fn load_with_dir(&self, base: &Path) -> Result<(T, PathBuf)> {
        match self {
            Source::Path(p) => {
                let p = join(base, p);
                Ok((read_json(&p)?, base_dir(&p)))
            }
            Source::Inline(v) => Ok((v.clone(), base.to_path_buf())),
        }
    }

    pub fn load(&self, base: &Path) -> Result<T> {
        Ok(self.load_with_dir(base)?.0)
    }
}

pub fn load_catalog(src: Option<&Source<GpuCatalog>>, base: &Path) -> Result<GpuCatalog> {
    src.map_or_else(|| Ok(GpuCatalog::reference()), |s| s.load(base))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureDef {
    #[serde(default = "default_apps")]
    pub apps: usize,
    #[serde(default = "default_kernels")]
    pub kernels_per_app: usize,
    #[serde(default = "default_fixture_seed")]
    pub seed: u64,
}

fn default_apps() -> usize {
    FixtureParams::default().apps
}

fn default_kernels() -> usize {
    FixtureParams::default().kernels_per_app
}

fn default_fixture_seed() -> u64 {
    FixtureParams::default().seed
}

impl From<FixtureDef> for FixtureParams {
    fn from(d: FixtureDef) -> Self {
        FixtureParams {
            apps: d.apps,
            kernels_per_app: d.kernels_per_app,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmDecodeDef {
    /// Name of an entry in the distribution's `models`.
    pub model: String,
    pub batch: u32,
    pub context: u64,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobDef {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    /// Trace file per GPU model name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub traces: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_decode: Option<LlmDecodeDef>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DistributionFile {
    #[serde(default)]
    pub jobs: Vec<JobDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<FixtureDef>,
    /// Model shapes referenced by `llm_decode` jobs, one file or object each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<Source<LlmModelConfig>>,
}

impl DistributionFile {
    /// Loads every trace and builds the weighted distribution. Traces bound
    /// to GPUs outside `catalog` are ignored.
    pub fn resolve(&self, catalog: &GpuCatalog, base: &Path) -> Result<JobDistribution> {
        let models = self
            .models
            .iter()
            .map(|m| m.load(base))
            .collect::<Result<Vec<LlmModelConfig>>>()?;
        let mut entries = Vec::new();
        for job in &self.jobs {
            let spec = match (&job.llm_decode, job.traces.is_empty()) {
                (Some(d), true) => {
                    let model = models.iter().find(|m| m.name == d.model).ok_or_else(|| {
                        AgoraError::Config(format!("job `{}`: unknown model `{}`", job.name, d.model))
                    })?;
                    JobSpec::LlmDecode {
                        model: model.clone(),
                        batch: d.batch,
                        context: d.context,
                        output_tokens: d.output_tokens,
                    }
                }
                (None, false) => {
                    let mut traces = BTreeMap::new();
                    for (gpu, path) in &job.traces {
                        if let Ok(g) = catalog.get(gpu) {
                            traces.insert(gpu.clone(), load_trace(&join(base, path), g)?);
                        }
                    }
                    JobSpec::Traces { traces }
                }
                _ => {
                    return Err(AgoraError::Config(format!(
                        "job `{}` needs exactly one of `traces` or `llm_decode`",
                        job.name
                    )))
                }
            };
            entries.push(JobEntry::new(job.name.clone(), spec, job.weight));
        }
        if let Some(f) = self.fixture {
            entries.extend(torchbench_like(catalog, &f.into())?.entries().iter().cloned());
        }
        Ok(JobDistribution::new(entries)?)
    }
}

/// Configuration shared by `econ` and `sweep`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Source<GpuCatalog>>,
    pub curve: Source<FbpCurve>,
    pub distribution: Source<DistributionFile>,
    pub reference_gpu: String,
    #[serde(default = "default_n_jobs")]
    pub n_jobs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periods_us: Vec<u64>,
}

fn default_n_jobs() -> u64 {
    DEFAULT_N_JOBS
}

/// An experiment config with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub catalog: GpuCatalog,
    pub curve: FbpCurve,
    pub distribution: JobDistribution,
    pub reference_gpu: String,
    pub n_jobs: u64,
    pub seed: u64,
    pub periods_us: Vec<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, Experiment)> {
        let cfg: Self = read_json(path)?;
        let exp = cfg.resolve(&base_dir(path))?;
        Ok((cfg, exp))
    }

    pub fn resolve(&self, base: &Path) -> Result<Experiment> {
        let catalog = load_catalog(self.catalog.as_ref(), base)?;
        catalog.get(&self.reference_gpu)?;
        let curve = self.curve.load(base)?;
        let (dist, dist_dir) = self.distribution.load_with_dir(base)?;
        Ok(Experiment {
            distribution: dist.resolve(&catalog, &dist_dir)?,
            catalog,
            curve,
            reference_gpu: self.reference_gpu.clone(),
            n_jobs: self.n_jobs,
            seed: self.seed,
            periods_us: self.periods_us.clone(),
        })
    }
}

/// Where a node GPU's workload comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    Path(PathBuf),
    Synthetic { synthetic: SyntheticSpec, seed: u64 },
}

impl TraceSource {
    pub fn load(&self, gpu: &GpuModel, base: &Path) -> Result<Trace> {
        match self {
            TraceSource::Path(p) => load_trace(&join(base, p), gpu),
            TraceSource::Synthetic { synthetic, seed } => Ok(gen_synthetic_trace(synthetic, gpu, *seed)?),
        }
    }
}

//! Two-term roofline model of one LLM decode step.
//!
//! A step reads every active weight once plus the KV cache of every
//! sequence in the batch, and performs `2 * params` flops per sequence for
//! the projections plus attention over the context. Latency is whichever of
//! memory time and compute time is larger.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Trace, UtilizationRecord, WorkloadError};
use crate::pricing::GpuModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Attention {
    /// Grouped-query attention.
    Gqa { kv_heads: u32, head_dim: u32 },
    /// Multi-head latent attention: a compressed KV latent plus a decoupled
    /// rotary key per token.
    Mla { compressed_dim: u32, rope_dim: u32 },
}

impl Attention {
    /// Elements cached per token per layer.
    fn kv_elems(&self) -> f64 {
        match *self {
            Attention::Gqa { kv_heads, head_dim } => 2.0 * kv_heads as f64 * head_dim as f64,
            Attention::Mla {
                compressed_dim,
                rope_dim,
            } => compressed_dim as f64 + rope_dim as f64,
        }
    }

    /// Width that attention flops scale with (per token, per layer).
    fn attn_width(&self) -> f64 {
        match *self {
            Attention::Gqa { kv_heads, head_dim } => kv_heads as f64 * head_dim as f64,
            Attention::Mla {
                compressed_dim,
                rope_dim,
            } => compressed_dim as f64 + rope_dim as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmModelConfig {
    pub name: String,
    pub active_params: u64,
    pub dtype_bytes: f64,
    pub layers: u32,
    pub attention: Attention,
}

impl LlmModelConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let positive = match self.attention {
            Attention::Gqa { kv_heads, head_dim } => kv_heads > 0 && head_dim > 0,
            Attention::Mla {
                compressed_dim,
                rope_dim,
            } => compressed_dim > 0 && rope_dim > 0,
        };
        if self.active_params == 0
            || self.layers == 0
            || !positive
            || self.dtype_bytes.is_nan()
            || self.dtype_bytes <= 0.0
        {
            return Err(WorkloadError::BadArgs(format!(
                "model `{}` needs positive parameter, layer and attention sizes",
                self.name
            )));
        }
        Ok(())
    }

    /// KV-cache bytes per token per layer.
    pub fn kv_bytes_per_token_layer(&self) -> f64 {
        self.attention.kv_elems() * self.dtype_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    pub latency_s: f64,
    /// TB/s
    pub achieved_bw: f64,
    pub flops: f64,
    pub bytes_moved: f64,
    pub memory_bound: bool,
}

pub fn llm_decode_step(
    model: &LlmModelConfig,
    gpu: &GpuModel,
    batch: u32,
    context: u64,
    eff_bw: f64,
    eff_comp: f64,
) -> Result<DecodeStep, WorkloadError> {
    model.validate()?;
    if batch == 0 || context == 0 {
        return Err(WorkloadError::BadArgs("batch and context must be at least 1".into()));
    }
    let eff_ok = |e: f64| e > 0.0 && e <= 1.0;
    if !eff_ok(eff_bw) || !eff_ok(eff_comp) {
        return Err(WorkloadError::BadArgs("efficiency factors must lie in (0, 1]".into()));
    }

    let params = model.active_params as f64;
    let tokens = batch as f64 * context as f64 * model.layers as f64;
    let bytes_moved = params * model.dtype_bytes + tokens * model.kv_bytes_per_token_layer();
    let flops = 2.0 * params * batch as f64 + 4.0 * tokens * model.attention.attn_width();

    let bw_cap = gpu.bw_max * eff_bw;
    let mem_s = bytes_moved / (bw_cap * 1e12);
    let comp_s = flops / (gpu.compute_peak * eff_comp * 1e12);
    let memory_bound = mem_s >= comp_s;
    let latency_s = mem_s.max(comp_s);
    Ok(DecodeStep {
        latency_s,
        achieved_bw: (bytes_moved / latency_s / 1e12).min(bw_cap),
        flops,
        bytes_moved,
        memory_bound,
    })
}

impl DecodeStep {
    /// Trace record for this step, rounded up to whole microseconds. The
    /// recorded bandwidth keeps bytes moved constant over the rounded time.
    pub fn to_record(&self, gpu: &GpuModel, label: String) -> UtilizationRecord {
        let duration_us = (libm::ceil(self.latency_s * 1e6) as u64).max(1);
        let dur_s = duration_us as f64 * 1e-6;
        let bw = (self.bytes_moved / dur_s / 1e12).min(self.achieved_bw);
        UtilizationRecord::new(
            duration_us,
            bw,
            (self.flops / dur_s / (gpu.compute_peak * 1e12)).min(1.0),
            (bw / gpu.bw_max).min(1.0),
        )
        .with_label(label)
    }
}

/// One record per generated token; the context grows by one each step.
#[allow(clippy::too_many_arguments)]
pub fn llm_decode_trace(
    model: &LlmModelConfig,
    gpu: &GpuModel,
    batch: u32,
    context: u64,
    output_tokens: u32,
    eff_bw: f64,
    eff_comp: f64,
) -> Result<Trace, WorkloadError> {
    if output_tokens == 0 {
        return Err(WorkloadError::BadArgs("output_tokens must be at least 1".into()));
    }
    let records = (0..output_tokens)
        .map(|i| {
            llm_decode_step(model, gpu, batch, context + i as u64, eff_bw, eff_comp)
                .map(|s| s.to_record(gpu, format!("tok{i}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Trace::new(gpu, records, Some(batch as u64 * output_tokens as u64))
}

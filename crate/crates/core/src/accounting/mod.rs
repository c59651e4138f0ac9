//! KV-cache, projection-parameter and FLOP accounting per head layout.
//!
//! All quantities cover the attention block only: no MLP, embeddings or
//! activations.

mod bench;

pub use bench::{bench_attend, BenchFloat, BenchMeta, BenchReport, BenchRow, FloatMode};

use serde::{Deserialize, Serialize};

use crate::attention::HeadLayout;
use crate::error::{invalid, Result};
use crate::Variant;

/// Default cache element size (half precision).
pub const DEFAULT_DTYPE_BYTES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    pub hidden: usize,
    pub intermediate: usize,
    pub layers: usize,
    pub attn_heads: usize,
    pub kv_heads: usize,
    pub vocab: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.attn_heads == 0 || self.kv_heads == 0 {
            return Err(invalid(format!(
                "config '{}': hidden, layers, attn_heads and kv_heads must be positive",
                self.name
            )));
        }
        if self.hidden % self.attn_heads != 0 {
            return Err(invalid(format!(
                "config '{}': hidden ({}) not divisible by attn_heads ({})",
                self.name, self.hidden, self.attn_heads
            )));
        }
        if self.attn_heads % self.kv_heads != 0 {
            return Err(invalid(format!(
                "config '{}': attn_heads ({}) not divisible by kv_heads ({})",
                self.name, self.attn_heads, self.kv_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.attn_heads
    }

    pub fn layout(&self, variant: Variant) -> Result<HeadLayout> {
        self.validate()?;
        HeadLayout::new(variant, self.attn_heads, self.kv_heads, self.head_dim())
    }

    pub fn preset_376m() -> Self {
        Self {
            name: "376M".into(),
            hidden: 1024,
            intermediate: 3584,
            layers: 8,
            attn_heads: 8,
            kv_heads: 4,
            vocab: 128256,
        }
    }

    pub fn preset_776m() -> Self {
        Self {
            name: "776M".into(),
            hidden: 1536,
            intermediate: 5376,
            layers: 12,
            attn_heads: 12,
            kv_heads: 6,
            vocab: 128256,
        }
    }

    pub fn preset_1_5b() -> Self {
        Self {
            name: "1.5B".into(),
            hidden: 2048,
            intermediate: 7168,
            layers: 16,
            attn_heads: 16,
            kv_heads: 4,
            vocab: 128256,
        }
    }

    pub fn presets() -> Vec<Self> {
        vec![Self::preset_376m(), Self::preset_776m(), Self::preset_1_5b()]
    }
}

/// K and V bytes cached per token across all layers.
pub fn kv_cache_bytes(config: &ModelConfig, variant: Variant, dtype_bytes: usize) -> Result<usize> {
    let layout = config.layout(variant)?;
    Ok(2 * config.layers * layout.kv_heads * layout.head_dim * dtype_bytes)
}

/// Per-layer projection sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

impl ProjectionParams {
    pub fn qkv(&self) -> usize {
        self.wq + self.wk + self.wv
    }

    pub fn total(&self) -> usize {
        self.qkv() + self.wo
    }
}

pub fn projection_params(config: &ModelConfig, variant: Variant) -> Result<ProjectionParams> {
    let layout = config.layout(variant)?;
    let h = config.hidden;
    Ok(ProjectionParams {
        wq: h * layout.q_width(),
        wk: h * layout.kv_width(),
        wv: h * layout.kv_width(),
        wo: layout.output_width() * h,
    })
}

/// Multiply-adds for decoding one token against a context of `seq` tokens,
/// summed over layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopEstimate {
    pub q_proj: u64,
    pub kv_proj: u64,
    pub logits: u64,
    pub weighted_sum: u64,
    pub out_proj: u64,
}

impl FlopEstimate {
    /// Logits plus the probability-weighted value sum.
    pub fn attention_core(&self) -> u64 {
        self.logits + self.weighted_sum
    }

    pub fn total_macs(&self) -> u64 {
        self.q_proj + self.kv_proj + self.logits + self.weighted_sum + self.out_proj
    }

    /// Two floating-point operations per multiply-add.
    pub fn flops(&self) -> u64 {
        2 * self.total_macs()
    }
}

pub fn score_flops(config: &ModelConfig, variant: Variant, seq: usize) -> Result<FlopEstimate> {
    if seq == 0 {
        return Err(invalid("seq must be >= 1"));
    }
    let layout = config.layout(variant)?;
    let l = config.layers as u64;
    let h = config.hidden as u64;
    let d = layout.head_dim as u64;
    let out = layout.output_heads as u64;
    let seq = seq as u64;
    Ok(FlopEstimate {
        q_proj: l * h * layout.q_width() as u64,
        kv_proj: l * 2 * h * layout.kv_width() as u64,
        logits: l * out * seq * d,
        weighted_sum: l * out * seq * d,
        out_proj: l * layout.output_width() as u64 * h,
    })
}

/// Everything the accounting knows about one (config, variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub variant: Variant,
    pub dtype_bytes: usize,
    pub kv_bytes_per_token: usize,
    pub params_wq: usize,
    pub params_wk: usize,
    pub params_wv: usize,
    pub params_wo: usize,
    /// Attention projection parameters over all layers.
    pub attention_params_total: usize,
}

impl Budget {
    pub fn new(config: &ModelConfig, variant: Variant, dtype_bytes: usize) -> Result<Self> {
        let p = projection_params(config, variant)?;
        Ok(Self {
            variant,
            dtype_bytes,
            kv_bytes_per_token: kv_cache_bytes(config, variant, dtype_bytes)?,
            params_wq: p.wq,
            params_wk: p.wk,
            params_wv: p.wv,
            params_wo: p.wo,
            attention_params_total: p.total() * config.layers,
        })
    }

    pub fn kv_bytes(&self, seq: usize) -> usize {
        self.kv_bytes_per_token * seq
    }
}

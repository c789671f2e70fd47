//! Prefill cost of a dense decoder-only LLM as a function of prompt length.
//!
//! Counts use 2 FLOPs per multiply-accumulate and cover the linear
//! projections, the attention score and value-mixing products, the MLP and
//! the LM head. Softmax and normalization FLOPs are left out. Prefill time is
//! a roofline estimate: the slower of compute time and memory-traffic time.
//!
//! Integer quantities are accumulated in `u128` and converted to `f64` only
//! when reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ACTIVATION_MULTIPLIER: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnStyle {
    /// Gate, up and down projections (SwiGLU-style).
    Gated,
    /// Up and down projections.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: u64,
    pub hidden_dim: u64,
    pub n_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub ffn_style: FfnStyle,
    pub vocab_size: u64,
    pub bytes_per_param: u64,
    pub bytes_per_act: u64,
    /// Per-token activation working set, in units of `hidden_dim` values.
    #[serde(default = "default_multiplier")]
    pub activation_multiplier: u64,
}

fn default_multiplier() -> u64 {
    DEFAULT_ACTIVATION_MULTIPLIER
}

impl ModelConfig {
    /// LLaMA-2-7B shapes in fp16.
    pub fn llama2_7b() -> Self {
        Self {
            n_layers: 32,
            hidden_dim: 4096,
            n_heads: 32,
            head_dim: 128,
            ffn_dim: 11008,
            ffn_style: FfnStyle::Gated,
            vocab_size: 32000,
            bytes_per_param: 2,
            bytes_per_act: 2,
            activation_multiplier: DEFAULT_ACTIVATION_MULTIPLIER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("hidden_dim", self.hidden_dim),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("bytes_per_param", self.bytes_per_param),
            ("bytes_per_act", self.bytes_per_act),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config `{name}` must be positive")));
        }
        if self.n_heads.checked_mul(self.head_dim) != Some(self.hidden_dim) {
            return Err(Error::invalid(format!(
                "n_heads*head_dim = {}*{} != hidden_dim = {}",
                self.n_heads, self.head_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Parameter count: per layer `4d²` attention, `3·d·d_ff` (gated) or
    /// `2·d·d_ff` (plain) MLP and two norm vectors; plus untied input
    /// embedding and LM head and the final norm.
    pub fn parameter_count(&self) -> Result<u128> {
        let d = self.hidden_dim as u128;
        let ff = self.ffn_dim as u128;
        let mlp = match self.ffn_style {
            FfnStyle::Gated => mul(&[3, d, ff])?,
            FfnStyle::Plain => mul(&[2, d, ff])?,
        };
        let per_layer = add(&[mul(&[4, d, d])?, mlp, mul(&[2, d])?])?;
        add(&[
            mul(&[self.n_layers as u128, per_layer])?,
            mul(&[2, self.vocab_size as u128, d])?,
            d,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    /// FLOP/s.
    pub peak_flops: f64,
    /// Bytes/s.
    pub mem_bandwidth: f64,
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("peak_flops", self.peak_flops), ("mem_bandwidth", self.mem_bandwidth)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("hardware `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostQuery {
    pub n_text_tokens: u64,
    pub n_visual_tokens_full: u64,
    /// Fraction of visual tokens kept, in `(0, 1]`.
    pub retention: f64,
}

impl CostQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(Error::invalid(format!("retention {} outside (0, 1]", self.retention)));
        }
        if self.total_tokens() == 0 {
            return Err(Error::invalid("query has no tokens"));
        }
        Ok(())
    }

    pub fn visual_tokens(&self) -> u64 {
        (self.retention * self.n_visual_tokens_full as f64).round() as u64
    }

    pub fn total_tokens(&self) -> u64 {
        self.n_text_tokens + self.visual_tokens()
    }

    pub fn with_retention(&self, retention: f64) -> Self {
        Self { retention, ..*self }
    }
}

/// Exact integer tallies for a prompt of `tokens` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTally {
    pub tokens: u64,
    pub projection_flops: u128,
    pub attention_flops: u128,
    pub mlp_flops: u128,
    pub lm_head_flops: u128,
    pub weight_bytes: u128,
    pub kv_cache_bytes: u128,
    pub attention_matrix_bytes: u128,
    pub activation_bytes_peak: u128,
}

impl CostTally {
    pub fn prefill_flops(&self) -> u128 {
        self.projection_flops + self.attention_flops + self.mlp_flops + self.lm_head_flops
    }

    pub fn memory_bytes(&self) -> u128 {
        self.weight_bytes + self.kv_cache_bytes + self.activation_bytes_peak
    }

    fn checked(self) -> Result<Self> {
        add(&[
            self.projection_flops,
            self.attention_flops,
            self.mlp_flops,
            self.lm_head_flops,
        ])?;
        add(&[self.weight_bytes, self.kv_cache_bytes, self.activation_bytes_peak])?;
        Ok(self)
    }
}

fn overflow() -> Error {
    Error::invalid("cost arithmetic overflow")
}

fn add(terms: &[u128]) -> Result<u128> {
    terms
        .iter()
        .try_fold(0u128, |acc, &t| acc.checked_add(t))
        .ok_or_else(overflow)
}

fn mul(factors: &[u128]) -> Result<u128> {
    factors
        .iter()
        .try_fold(1u128, |acc, &f| acc.checked_mul(f))
        .ok_or_else(overflow)
}

/// Score (`QKᵀ`) plus value-mixing FLOPs of all layers: `L·4·T²·d`.
pub fn attention_flops(model: &ModelConfig, tokens: u64) -> Result<u128> {
    let t = tokens as u128;
    let width = model.n_heads as u128 * model.head_dim as u128;
    mul(&[model.n_layers as u128, 4, t, t, width])
}

pub fn tally(model: &ModelConfig, tokens: u64) -> Result<CostTally> {
    model.validate()?;
    let l = model.n_layers as u128;
    let t = tokens as u128;
    let d = model.hidden_dim as u128;
    let width = model.n_heads as u128 * model.head_dim as u128;
    let ff = model.ffn_dim as u128;
    let bpa = model.bytes_per_act as u128;

    // Q, K, V and output projections
    let projection_flops = mul(&[l, 8, t, d, width])?;
    let mlp_factor = match model.ffn_style {
        FfnStyle::Gated => 6,
        FfnStyle::Plain => 4,
    };
    let mlp_flops = mul(&[l, mlp_factor, t, d, ff])?;
    let lm_head_flops = mul(&[2, t, d, model.vocab_size as u128])?;
    let attention_matrix_bytes = mul(&[model.n_heads as u128, t, t, bpa])?;
    let working_set = mul(&[model.activation_multiplier as u128, t, d, bpa])?;

    CostTally {
        tokens,
        projection_flops,
        attention_flops: attention_flops(model, tokens)?,
        mlp_flops,
        lm_head_flops,
        weight_bytes: mul(&[model.parameter_count()?, model.bytes_per_param as u128])?,
        kv_cache_bytes: mul(&[2, l, t, d, bpa])?,
        attention_matrix_bytes,
        activation_bytes_peak: add(&[working_set, attention_matrix_bytes])?,
    }
    .checked()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub prefill_flops: f64,
    pub attention_flops: f64,
    pub kv_cache_bytes: f64,
    pub activation_bytes_peak: f64,
    pub memory_bytes: f64,
    pub prefill_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub retention: f64,
    pub tokens: u64,
    pub prefill_flops: f64,
    pub attention_flops: f64,
    pub weight_bytes: f64,
    pub kv_cache_bytes: f64,
    pub attention_matrix_bytes: f64,
    pub activation_bytes_peak: f64,
    pub memory_bytes: f64,
    pub prefill_time_s: f64,
    /// Each quantity relative to keeping every visual token.
    pub ratios: CostRatios,
    pub activation_multiplier: u64,
    pub notes: String,
}

fn time_s(t: &CostTally, hw: &HardwareConfig) -> f64 {
    let compute = t.prefill_flops() as f64 / hw.peak_flops;
    let memory = t.memory_bytes() as f64 / hw.mem_bandwidth;
    compute.max(memory)
}

/// Costs for `q` and their ratios against `q` at full retention.
pub fn estimate(model: &ModelConfig, hw: &HardwareConfig, q: &CostQuery) -> Result<CostReport> {
    hw.validate()?;
    q.validate()?;
    let cur = tally(model, q.total_tokens())?;
    let full = tally(model, q.with_retention(1.0).total_tokens())?;
    let ratio = |a: u128, b: u128| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let time = time_s(&cur, hw);
    let full_time = time_s(&full, hw);
    Ok(CostReport {
        retention: q.retention,
        tokens: cur.tokens,
        prefill_flops: cur.prefill_flops() as f64,
        attention_flops: cur.attention_flops as f64,
        weight_bytes: cur.weight_bytes as f64,
        kv_cache_bytes: cur.kv_cache_bytes as f64,
        attention_matrix_bytes: cur.attention_matrix_bytes as f64,
        activation_bytes_peak: cur.activation_bytes_peak as f64,
        memory_bytes: cur.memory_bytes() as f64,
        prefill_time_s: time,
        ratios: CostRatios {
            prefill_flops: ratio(cur.prefill_flops(), full.prefill_flops()),
            attention_flops: ratio(cur.attention_flops, full.attention_flops),
            kv_cache_bytes: ratio(cur.kv_cache_bytes, full.kv_cache_bytes),
            activation_bytes_peak: ratio(cur.activation_bytes_peak, full.activation_bytes_peak),
            memory_bytes: ratio(cur.memory_bytes(), full.memory_bytes()),
            prefill_time: time / full_time,
        },
        activation_multiplier: model.activation_multiplier,
        notes: "2 FLOPs per MAC; softmax/norm FLOPs excluded; dense MHA, no flash-attention savings".into(),
    })
}

pub fn sweep(
    model: &ModelConfig,
    hw: &HardwareConfig,
    base: &CostQuery,
    retentions: &[f64],
) -> Result<Vec<CostReport>> {
    retentions
        .iter()
        .map(|&r| estimate(model, hw, &base.with_retention(r)))
        .collect()
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "r",
    "T",
    "flops",
    "kv_bytes",
    "act_bytes",
    "time_s",
    "flops_ratio",
    "kv_ratio",
    "act_ratio",
    "time_ratio",
];

pub fn sweep_csv(reports: &[CostReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(SWEEP_CSV_HEADER).map_err(err)?;
    for r in reports {
        w.write_record([
            r.retention.to_string(),
            r.tokens.to_string(),
            r.prefill_flops.to_string(),
            r.kv_cache_bytes.to_string(),
            r.activation_bytes_peak.to_string(),
            r.prefill_time_s.to_string(),
            r.ratios.prefill_flops.to_string(),
            r.ratios.kv_cache_bytes.to_string(),
            r.ratios.activation_bytes_peak.to_string(),
            r.ratios.prefill_time.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

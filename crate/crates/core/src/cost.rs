//! Closed-form MAC, cache and latency model.
//!
//! Every term is the exact multiply-accumulate count of the kernel the
//! runtime executes, so these formulas and the instrumented `OpCounter` must
//! agree to the integer. Conventions:
//!
//! * prefill scores use a dense `N × N` kernel (the causal mask is applied
//!   after scoring);
//! * an MLA decode step re-up-projects every cached latent;
//! * RoPE costs two MACs per rotated element;
//! * norms and embedding lookups cost nothing; the logits head costs
//!   `vocab × d` per logits row and can be switched off.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::attention::{gqa_cache_bytes, mla_cache_bytes, GqaLayerConfig, MlaLayerConfig};
use crate::ffn::FfnConfig;
use crate::model::{count_params, LayerOps, ModelConfig};
use crate::tensor::BitWidth;
use crate::{Error, Result};

/// Hypothetical device speeds. Times are `amount / speed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub name: String,
    pub io_bytes_per_sec: f64,
    pub flops_per_sec: f64,
}

impl HardwareProfile {
    pub fn new(name: impl Into<String>, io_bytes_per_sec: f64, flops_per_sec: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(io_bytes_per_sec) || !ok(flops_per_sec) {
            return Err(Error::InvalidParameter(format!(
                "hardware speeds must be positive, got io={io_bytes_per_sec} flops={flops_per_sec}"
            )));
        }
        Ok(Self {
            name: name.into(),
            io_bytes_per_sec,
            flops_per_sec,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dominant {
    Io,
    Compute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub io_seconds: f64,
    pub compute_seconds: f64,
    pub dominant: Dominant,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.io_seconds + self.compute_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub phase: Phase,
    /// `N`: prompt length for prefill, position of the generated token for decode.
    pub tokens: usize,
    pub macs: u64,
    pub flops: u64,
    pub cache_bytes: u64,
    /// Per-layer-summed breakdown (FFN included, logits head excluded).
    pub breakdown: LayerOps,
    pub lm_head_macs: u64,
    pub timing: Option<Timing>,
}

impl CostReport {
    /// Attaches io/compute times under `profile`.
    pub fn timed(mut self, profile: &HardwareProfile) -> Self {
        let io_seconds = self.cache_bytes as f64 / profile.io_bytes_per_sec;
        let compute_seconds = self.flops as f64 / profile.flops_per_sec;
        let dominant = if io_seconds > compute_seconds {
            Dominant::Io
        } else {
            Dominant::Compute
        };
        self.timing = Some(Timing {
            io_seconds,
            compute_seconds,
            dominant,
        });
        self
    }
}

/// Which parts of the network a cost covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostOptions {
    pub cache_bits: BitWidth,
    pub include_ffn: bool,
    pub include_lm_head: bool,
}

impl Default for CostOptions {
    /// The whole forward pass as the runtime executes it.
    fn default() -> Self {
        Self {
            cache_bits: BitWidth::Sixteen,
            include_ffn: true,
            include_lm_head: true,
        }
    }
}

impl CostOptions {
    /// Non-embedding weights only: FFN on, logits head off.
    pub fn non_embedding() -> Self {
        Self {
            include_lm_head: false,
            ..Self::default()
        }
    }

    /// Attention blocks only.
    pub fn attention_only() -> Self {
        Self {
            include_ffn: false,
            include_lm_head: false,
            ..Self::default()
        }
    }
}

fn u(v: usize) -> u64 {
    v as u64
}

/// Per-token MLA projections that do not depend on the cache.
fn mla_token_proj(c: &MlaLayerConfig) -> u64 {
    let (d, h, nope, rope) = (u(c.d_model), u(c.n_heads), u(c.d_nope), u(c.d_rope));
    let query = match c.q_rank {
        None => h * (nope + rope) * d,
        Some(r) => u(r) * d + u(r) * h * (nope + rope),
    };
    u(c.kv_rank) * d + rope * d + query + d * h * nope
}

/// Up-projecting one cached latent into keys and values.
fn mla_up_proj(c: &MlaLayerConfig) -> u64 {
    2 * u(c.n_heads) * u(c.d_nope) * u(c.kv_rank)
}

fn mla_rope(c: &MlaLayerConfig) -> u64 {
    2 * (u(c.n_heads) + 1) * u(c.d_rope)
}

/// Score plus value product for one query/key pair, all heads.
fn mla_pair(c: &MlaLayerConfig) -> u64 {
    u(c.n_heads) * (u(c.d_rope) + 2 * u(c.d_nope))
}

/// One MLA layer's prefill over `n` tokens.
pub fn mla_layer_prefill(c: &MlaLayerConfig, n: usize) -> LayerOps {
    let n = u(n);
    LayerOps {
        attn_proj: n * mla_token_proj(c) + n * mla_up_proj(c),
        rope: n * mla_rope(c),
        attn_scores: n * n * mla_pair(c),
        ..LayerOps::default()
    }
}

/// One MLA layer's decode step for the token at (1-based) position `n`.
pub fn mla_layer_decode(c: &MlaLayerConfig, n: usize) -> LayerOps {
    let n = u(n);
    LayerOps {
        attn_proj: mla_token_proj(c) + n * mla_up_proj(c),
        rope: mla_rope(c),
        attn_scores: n * mla_pair(c),
        ..LayerOps::default()
    }
}

fn gqa_token_proj(c: &GqaLayerConfig) -> u64 {
    let (d, h, kv, dh) = (u(c.d_model), u(c.n_heads), u(c.n_kv_heads), u(c.d_head));
    h * dh * d + 2 * kv * dh * d + d * h * dh
}

fn gqa_rope(c: &GqaLayerConfig) -> u64 {
    2 * (u(c.n_heads) + u(c.n_kv_heads)) * u(c.d_head)
}

fn gqa_pair(c: &GqaLayerConfig) -> u64 {
    2 * u(c.n_heads) * u(c.d_head)
}

pub fn gqa_layer_prefill(c: &GqaLayerConfig, n: usize) -> LayerOps {
    let n = u(n);
    LayerOps {
        attn_proj: n * gqa_token_proj(c),
        rope: n * gqa_rope(c),
        attn_scores: n * n * gqa_pair(c),
        ..LayerOps::default()
    }
}

pub fn gqa_layer_decode(c: &GqaLayerConfig, n: usize) -> LayerOps {
    let n = u(n);
    LayerOps {
        attn_proj: gqa_token_proj(c),
        rope: gqa_rope(c),
        attn_scores: n * gqa_pair(c),
        ..LayerOps::default()
    }
}

/// FFN MACs per token.
pub fn ffn_token_macs(c: &FfnConfig) -> u64 {
    u(c.activation.projections()) * u(c.d_model) * u(c.d_ffn)
}

fn check_tokens(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("token count must be at least 1".into()));
    }
    Ok(())
}

fn attention_ops(cfg: &ModelConfig, phase: Phase, n: usize) -> Result<LayerOps> {
    Ok(match (cfg.attention_kind.is_mla(), phase) {
        (true, Phase::Prefill) => mla_layer_prefill(&cfg.mla_layer()?, n),
        (true, Phase::Decode) => mla_layer_decode(&cfg.mla_layer()?, n),
        (false, Phase::Prefill) => gqa_layer_prefill(&cfg.gqa_layer()?, n),
        (false, Phase::Decode) => gqa_layer_decode(&cfg.gqa_layer()?, n),
    })
}

/// Cache bytes of `cfg` holding `tokens` tokens in every layer.
pub fn cache_bytes(cfg: &ModelConfig, bits: BitWidth, tokens: usize) -> u64 {
    if cfg.attention_kind.is_mla() {
        mla_cache_bytes(cfg.kv_rank, cfg.d_rope, bits, u(tokens), cfg.n_layers)
    } else {
        gqa_cache_bytes(cfg.n_kv_heads, cfg.d_head(), bits, u(tokens), cfg.n_layers)
    }
}

fn model_cost(cfg: &ModelConfig, phase: Phase, n: usize, opts: &CostOptions) -> Result<CostReport> {
    cfg.validate()?;
    check_tokens(n)?;
    let mut per_layer = attention_ops(cfg, phase, n)?;
    let rows = match phase {
        Phase::Prefill => u(n),
        Phase::Decode => 1,
    };
    if opts.include_ffn {
        per_layer.ffn = rows * ffn_token_macs(&cfg.ffn());
    }
    let layers = u(cfg.n_layers);
    let breakdown = LayerOps {
        attn_proj: layers * per_layer.attn_proj,
        rope: layers * per_layer.rope,
        attn_scores: layers * per_layer.attn_scores,
        ffn: layers * per_layer.ffn,
        norms: 0,
    };
    let lm_head_macs = if opts.include_lm_head {
        rows * u(cfg.vocab_size) * u(cfg.d_model)
    } else {
        0
    };
    let macs = breakdown.macs() + lm_head_macs;
    let cached = match phase {
        Phase::Prefill => n,
        Phase::Decode => n - 1,
    };
    Ok(CostReport {
        phase,
        tokens: n,
        macs,
        flops: 2 * macs,
        cache_bytes: cache_bytes(cfg, opts.cache_bits, cached),
        breakdown,
        lm_head_macs,
        timing: None,
    })
}

/// Forward pass over an `n`-token prompt; `cache_bytes` is the cache it fills.
pub fn prefill_cost(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    model_cost(cfg, Phase::Prefill, n, opts)
}

/// One decode step producing the token at position `n` (1-based) while
/// `n − 1` tokens are cached.
pub fn generate_cost(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    model_cost(cfg, Phase::Decode, n, opts)
}

fn require_mla(cfg: &ModelConfig, mla: bool) -> Result<()> {
    if cfg.attention_kind.is_mla() != mla {
        return Err(Error::InvalidConfig(format!(
            "expected {} config, got {:?}",
            if mla { "an MLA" } else { "a GQA-family" },
            cfg.attention_kind
        )));
    }
    Ok(())
}

pub fn prefill_cost_mla(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    require_mla(cfg, true)?;
    prefill_cost(cfg, n, opts)
}

pub fn generate_cost_mla(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    require_mla(cfg, true)?;
    generate_cost(cfg, n, opts)
}

pub fn prefill_cost_gqa(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    require_mla(cfg, false)?;
    prefill_cost(cfg, n, opts)
}

pub fn generate_cost_gqa(cfg: &ModelConfig, n: usize, opts: &CostOptions) -> Result<CostReport> {
    require_mla(cfg, false)?;
    generate_cost(cfg, n, opts)
}

/// MACs of greedy generation: prefill of the prompt, then one decode step per
/// new token at positions `prompt + 1 ..= prompt + n_new`.
pub fn generation_macs(cfg: &ModelConfig, prompt: usize, n_new: usize, opts: &CostOptions) -> Result<(u64, u64)> {
    let prefill = prefill_cost(cfg, prompt, opts)?.macs;
    let mut decode = 0;
    for k in 1..=n_new {
        decode += generate_cost(cfg, prompt + k, opts)?.macs;
    }
    Ok((prefill, decode))
}

/// Decode-step comparison of an MLA and a GQA-family config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDifference {
    pub tokens: usize,
    /// MLA MACs minus GQA MACs.
    pub mac_delta: i128,
    /// GQA cache bytes minus MLA cache bytes.
    pub cache_delta: i128,
    /// d(mac_delta)/dN, over all layers.
    pub mac_coefficient: i128,
    /// d(cache_delta)/dN in bytes, over all layers (fractional for 4-bit).
    pub cache_coefficient: f64,
}

fn check_comparable(mla: &ModelConfig, gqa: &ModelConfig) -> Result<()> {
    require_mla(mla, true)?;
    require_mla(gqa, false)?;
    if mla.d_model != gqa.d_model || mla.n_heads != gqa.n_heads || mla.n_layers != gqa.n_layers {
        return Err(Error::Incomparable(format!(
            "d_model/n_heads/n_layers differ: ({}, {}, {}) vs ({}, {}, {})",
            mla.d_model, mla.n_heads, mla.n_layers, gqa.d_model, gqa.n_heads, gqa.n_layers
        )));
    }
    Ok(())
}

pub fn decode_cost_difference(
    mla: &ModelConfig,
    gqa: &ModelConfig,
    n: usize,
    opts: &CostOptions,
) -> Result<CostDifference> {
    check_comparable(mla, gqa)?;
    let a = generate_cost(mla, n, opts)?;
    let b = generate_cost(gqa, n, opts)?;
    let (mc, gc) = (mla.mla_layer()?, gqa.gqa_layer()?);
    let layers = i128::from(mla.n_layers as u64);
    let mla_slope = i128::from(mla_up_proj(&mc) + mla_pair(&mc));
    let gqa_slope = i128::from(gqa_pair(&gc));
    let per_token_cache = i128::from(2 * u(gc.n_kv_heads) * u(gc.d_head)) - i128::from(u(mc.kv_rank) + u(mc.d_rope));
    Ok(CostDifference {
        tokens: n,
        mac_delta: i128::from(a.macs) - i128::from(b.macs),
        cache_delta: i128::from(b.cache_bytes) - i128::from(a.cache_bytes),
        mac_coefficient: layers * (mla_slope - gqa_slope),
        cache_coefficient: (layers * per_token_cache * i128::from(opts.cache_bits.bits())) as f64 / 8.0,
    })
}

/// Decode-step latency (io + compute) of `cfg` at position `n`.
pub fn decode_latency(cfg: &ModelConfig, n: usize, profile: &HardwareProfile, opts: &CostOptions) -> Result<f64> {
    let t = generate_cost(cfg, n, opts)?.timed(profile).timing;
    Ok(t.map_or(0.0, |t| t.total()))
}

/// Smallest position `N ≤ max_n` at which the MLA decode step is faster than
/// the GQA one under `profile`. Both latencies are affine in `N`, so the
/// crossing is solved in closed form and then confirmed by evaluation.
pub fn decode_crossover(
    mla: &ModelConfig,
    gqa: &ModelConfig,
    profile: &HardwareProfile,
    opts: &CostOptions,
    max_n: usize,
) -> Result<Option<usize>> {
    check_comparable(mla, gqa)?;
    let diff = |n: usize| -> Result<f64> {
        Ok(decode_latency(mla, n, profile, opts)? - decode_latency(gqa, n, profile, opts)?)
    };
    if max_n == 0 {
        return Ok(None);
    }
    let d1 = diff(1)?;
    if d1 < 0.0 {
        return Ok(Some(1));
    }
    if max_n == 1 {
        return Ok(None);
    }
    let slope = diff(2)? - d1;
    if slope >= 0.0 {
        return Ok(None);
    }
    // d1 + slope (N - 1) < 0
    let guess = 1.0 + libm::floor(-d1 / slope) as f64;
    let mut n = (guess.max(1.0) as usize).saturating_sub(2).max(1);
    while n <= max_n {
        if diff(n)? < 0.0 {
            return Ok(Some(n));
        }
        n += 1;
        if n as f64 > guess + 3.0 {
            break;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    Params,
    Macs,
    Flops,
    MacsPerParam,
    CacheBytes,
    /// Prefill io + compute time; needs a profile.
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub name: String,
    pub params_nonemb: u64,
    pub macs: u64,
    pub flops: u64,
    pub macs_per_param: f64,
    pub cache_bytes: u64,
    /// 1-based position after sorting.
    pub rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_seconds: Option<f64>,
}

/// Prefill cost of each candidate at `n` tokens under `opts`, sorted
/// ascending by `key`; ties keep input order.
pub fn rank_architectures(
    candidates: &[(String, ModelConfig)],
    n: usize,
    opts: &CostOptions,
    key: RankKey,
    profile: Option<&HardwareProfile>,
) -> Result<Vec<RankRow>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    if key == RankKey::Latency && profile.is_none() {
        return Err(Error::InvalidParameter(
            "ranking by latency needs a hardware profile".into(),
        ));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (name, cfg) in candidates {
        let mut report = prefill_cost(cfg, n, opts)?;
        if let Some(p) = profile {
            report = report.timed(p);
        }
        let params = count_params(cfg).non_embedding;
        rows.push(RankRow {
            name: name.clone(),
            params_nonemb: params,
            macs: report.macs,
            flops: report.flops,
            macs_per_param: report.macs as f64 / params as f64,
            cache_bytes: report.cache_bytes,
            rank: 0,
            latency_seconds: report.timing.map(|t| t.total()),
        });
    }
    let sort_key = |r: &RankRow| -> f64 {
        match key {
            RankKey::Params => r.params_nonemb as f64,
            RankKey::Macs => r.macs as f64,
            RankKey::Flops => r.flops as f64,
            RankKey::MacsPerParam => r.macs_per_param,
            RankKey::CacheBytes => r.cache_bytes as f64,
            RankKey::Latency => r.latency_seconds.unwrap_or(0.0),
        }
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| sort_key(&rows[a]).total_cmp(&sort_key(&rows[b])).then(a.cmp(&b)));
    let mut ranked = vec![None; rows.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranked[pos] = Some(i);
    }
    let mut rows: Vec<Option<RankRow>> = rows.into_iter().map(Some).collect();
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(pos, i)| {
            let mut row = rows[i.expect("permutation")].take().expect("each row once");
            row.rank = pos + 1;
            row
        })
        .collect())
}

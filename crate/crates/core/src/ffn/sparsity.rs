//! Activation masking and the search for the largest tolerable sparsity rate.
//!
//! Thresholds are per layer: a calibration pass records every post-activation
//! magnitude of each layer, and the threshold for rate `r` is the
//! `⌈r·len⌉`-th smallest of them. The masked run then zeroes every entry with
//! `|x| ≤ T`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ActivationHook;
use crate::model::{count_params, Model, ModelConfig, Resident};
use crate::{Error, Result};

/// `⌈r·len⌉`, forgiving the rounding error in products such as `0.9 × 10`.
fn mask_count(r: f64, len: usize) -> usize {
    let k = libm::ceil(r * len as f64 - 1e-9);
    (k.max(0.0) as usize).min(len)
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter(alloc::format!("rate {r} outside [0, 1]")));
    }
    Ok(())
}

/// Zeroes the `⌈r·len⌉` entries of smallest magnitude, lower index first on
/// ties. Returns the masked vector, the largest masked magnitude (0 when
/// nothing is masked) and the mask (`1` = masked).
pub fn mask_smallest(x: &[f32], r: f64) -> (Vec<f32>, f32, Vec<u8>) {
    let k = mask_count(r.clamp(0.0, 1.0), x.len());
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()).then(a.cmp(&b)));
    let mut out = x.to_vec();
    let mut mask = vec![0u8; x.len()];
    let mut threshold = 0.0f32;
    for &i in &order[..k] {
        threshold = x[i].abs();
        out[i] = 0.0;
        mask[i] = 1;
    }
    (out, threshold, mask)
}

/// Fraction of entries that are exactly zero.
pub fn zero_fraction(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().filter(|v| **v == 0.0).count() as f64 / x.len() as f64
}

/// Hook that records post-activation magnitudes per layer.
#[derive(Debug, Clone, Default)]
pub struct Calibration {
    magnitudes: Vec<Vec<f32>>,
    sorted: bool,
}

impl Calibration {
    pub fn new(n_layers: usize) -> Self {
        Self {
            magnitudes: vec![Vec::new(); n_layers],
            sorted: false,
        }
    }

    fn sort(&mut self) {
        if !self.sorted {
            for m in &mut self.magnitudes {
                m.sort_by(f32::total_cmp);
            }
            self.sorted = true;
        }
    }

    /// Per-layer thresholds for rate `r`; `None` where nothing is masked.
    pub fn thresholds(&mut self, r: f64) -> Vec<Option<f32>> {
        self.sort();
        self.magnitudes
            .iter()
            .map(|m| match mask_count(r, m.len()) {
                0 => None,
                k => Some(m[k - 1]),
            })
            .collect()
    }

    /// Fraction of recorded activations that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let total: usize = self.magnitudes.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        let zeros: usize = self
            .magnitudes
            .iter()
            .map(|m| m.iter().filter(|v| **v == 0.0).count())
            .sum();
        zeros as f64 / total as f64
    }
}

impl ActivationHook for Calibration {
    fn on_activation(&mut self, layer: usize, x: &mut [f32]) {
        self.sorted = false;
        self.magnitudes[layer].extend(x.iter().map(|v| v.abs()));
    }
}

/// Hook that zeroes activations with `|x| ≤ T` of their layer and counts the
/// resulting zeros.
#[derive(Debug, Clone)]
pub struct Masked {
    thresholds: Vec<Option<f32>>,
    zeros: u64,
    seen: u64,
}

impl Masked {
    pub fn new(thresholds: Vec<Option<f32>>) -> Self {
        Self {
            thresholds,
            zeros: 0,
            seen: 0,
        }
    }

    /// Zero fraction of the activations after masking.
    pub fn zero_fraction(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.zeros as f64 / self.seen as f64
        }
    }
}

impl ActivationHook for Masked {
    fn on_activation(&mut self, layer: usize, x: &mut [f32]) {
        if let Some(t) = self.thresholds.get(layer).copied().flatten() {
            for v in x.iter_mut() {
                if v.abs() <= t {
                    *v = 0.0;
                }
            }
        }
        self.seen += x.len() as u64;
        self.zeros += x.iter().filter(|v| **v == 0.0).count() as u64;
    }
}

#[derive(Default)]
struct ZeroCounter {
    zeros: u64,
    seen: u64,
}

impl ActivationHook for ZeroCounter {
    fn on_activation(&mut self, _layer: usize, x: &mut [f32]) {
        self.seen += x.len() as u64;
        self.zeros += x.iter().filter(|v| **v == 0.0).count() as u64;
    }
}

/// Fraction of post-activation entries that are exactly zero over a forward
/// pass of `stream`, pooled over tokens and layers.
pub fn activation_sparsity_measure(model: &Model, stream: &[u32]) -> Result<f64> {
    if stream.is_empty() {
        return Err(Error::Empty("token stream"));
    }
    let mut counter = ZeroCounter::default();
    for window in stream.chunks(model.config().max_seq_len) {
        model.prefill_with(window, &mut Resident, &mut counter)?;
    }
    Ok(counter.zeros as f64 / counter.seen as f64)
}

/// `(masked, executed, executed / total)` for a given total parameter count.
/// Only down-projection inputs are counted as skippable.
pub fn executed_params_for_total(
    total: u64,
    n_layers: usize,
    d_ffn: usize,
    d_model: usize,
    rate: f64,
) -> (u64, u64, f64) {
    let skippable = (n_layers * d_ffn * d_model) as f64;
    let masked = libm::round(rate.clamp(0.0, 1.0) * skippable) as u64;
    let masked = masked.min(total);
    let executed = total - masked;
    let ratio = if total == 0 {
        1.0
    } else {
        executed as f64 / total as f64
    };
    (masked, executed, ratio)
}

/// Executed-parameter accounting for a model config at activation sparsity
/// `rate`.
pub fn executed_params(cfg: &ModelConfig, rate: f64) -> (u64, u64, f64) {
    executed_params_for_total(count_params(cfg).total(), cfg.n_layers, cfg.d_ffn, cfg.d_model, rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityOptions {
    /// Largest tolerated perplexity increase.
    pub delta_ppl: f64,
    /// Ascending candidate rates.
    pub candidates: Vec<f64>,
    /// Accept `r` when `ppl_base − ppl_r ≥ Δppl` (the acceptance test exactly as
    /// printed in the algorithm) instead of bounding the increase.
    pub literal: bool,
}

impl Default for SparsityOptions {
    fn default() -> Self {
        Self {
            delta_ppl: 1.0,
            candidates: (0..=19).map(|i| f64::from(i) * 0.05).collect(),
            literal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub rate: f64,
    /// Largest per-layer threshold (0 when nothing is masked).
    pub threshold: f32,
    pub thresholds: Vec<Option<f32>>,
    pub baseline_ppl: f64,
    pub masked_ppl: f64,
    /// Zero fraction of the activations under masking.
    pub zero_fraction: f64,
    pub masked_params: u64,
    pub executed_params: u64,
    pub executed_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub threshold: f32,
    pub ppl: f64,
    pub ppl_delta: f64,
    pub zero_fraction: f64,
    pub masked_params: u64,
    pub executed_params: u64,
}

fn evaluate(
    model: &Model,
    stream: &[u32],
    calibration: &mut Calibration,
    baseline: f64,
    r: f64,
) -> Result<SparsityReport> {
    check_rate(r)?;
    let thresholds = calibration.thresholds(r);
    let mut hook = Masked::new(thresholds.clone());
    let ppl = model.perplexity_with(stream, &mut Resident, &mut hook)?;
    let (masked, executed, ratio) = executed_params(model.config(), r);
    Ok(SparsityReport {
        rate: r,
        threshold: thresholds.iter().flatten().copied().fold(0.0, f32::max),
        thresholds,
        baseline_ppl: baseline,
        masked_ppl: ppl,
        zero_fraction: hook.zero_fraction(),
        masked_params: masked,
        executed_params: executed,
        executed_ratio: ratio,
    })
}

fn calibrate(model: &Model, stream: &[u32]) -> Result<(Calibration, f64)> {
    let mut calibration = Calibration::new(model.config().n_layers);
    let baseline = model.perplexity_with(stream, &mut Resident, &mut calibration)?;
    Ok((calibration, baseline))
}

/// Evaluates every candidate rate. The model must be fully resident.
pub fn sparsity_sweep(model: &Model, stream: &[u32], rates: &[f64]) -> Result<Vec<SweepRow>> {
    let (mut calibration, baseline) = calibrate(model, stream)?;
    rates
        .iter()
        .map(|&r| {
            let rep = evaluate(model, stream, &mut calibration, baseline, r)?;
            Ok(SweepRow {
                r,
                threshold: rep.threshold,
                ppl: rep.masked_ppl,
                ppl_delta: rep.masked_ppl - baseline,
                zero_fraction: rep.zero_fraction,
                masked_params: rep.masked_params,
                executed_params: rep.executed_params,
            })
        })
        .collect()
}

/// Returns the largest candidate rate whose perplexity increase stays within
/// `delta_ppl`, or `None` if no candidate qualifies.
pub fn determine_sparsity_rate(
    model: &Model,
    stream: &[u32],
    opts: &SparsityOptions,
) -> Result<Option<SparsityReport>> {
    if opts.candidates.is_empty() {
        return Err(Error::Empty("candidate rates"));
    }
    if opts.candidates.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("candidate rates must be ascending".into()));
    }
    if opts.delta_ppl.is_nan() {
        return Err(Error::InvalidParameter("delta_ppl is NaN".into()));
    }
    let (mut calibration, baseline) = calibrate(model, stream)?;
    let mut best = None;
    for &r in &opts.candidates {
        let rep = evaluate(model, stream, &mut calibration, baseline, r)?;
        let ok = if opts.literal {
            baseline - rep.masked_ppl >= opts.delta_ppl
        } else {
            rep.masked_ppl - baseline <= opts.delta_ppl
        };
        if ok {
            best = Some(rep);
        }
    }
    Ok(best)
}

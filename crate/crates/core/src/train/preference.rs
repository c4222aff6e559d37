//! DPO, self-refinement and ARIES losses over precomputed log-probabilities.
//!
//! Gradients are taken with respect to the policy log-probabilities only; the
//! reference terms are constants.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Log-probabilities of both responses under one refinement context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineContext {
    pub policy_chosen: f64,
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
}

impl RefineContext {
    fn margin(&self) -> f64 {
        (self.policy_chosen - self.ref_chosen) - (self.policy_rejected - self.ref_rejected)
    }

    fn values(&self) -> [f64; 4] {
        [
            self.policy_chosen,
            self.policy_rejected,
            self.ref_chosen,
            self.ref_rejected,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    /// `log π_θ(y_w | x)`.
    pub policy_chosen: f64,
    /// `log π_θ(y_l | x)`.
    pub policy_rejected: f64,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
    /// Both responses conditioned on `(x, y_l, z)`.
    #[serde(default)]
    pub refine_after_rejected: Option<RefineContext>,
    /// Both responses conditioned on `(x, y_w, z)`.
    #[serde(default)]
    pub refine_after_chosen: Option<RefineContext>,
}

impl PreferenceExample {
    /// Example whose policy equals the reference in every context.
    pub fn neutral(chosen: f64, rejected: f64) -> Self {
        let ctx = RefineContext {
            policy_chosen: chosen,
            policy_rejected: rejected,
            ref_chosen: chosen,
            ref_rejected: rejected,
        };
        Self {
            policy_chosen: chosen,
            policy_rejected: rejected,
            ref_chosen: chosen,
            ref_rejected: rejected,
            refine_after_rejected: Some(ctx),
            refine_after_chosen: Some(ctx),
        }
    }

    fn margin(&self) -> f64 {
        (self.policy_chosen - self.ref_chosen) - (self.policy_rejected - self.ref_rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreferenceBatch {
    pub examples: Vec<PreferenceExample>,
}

impl PreferenceBatch {
    pub fn new(examples: Vec<PreferenceExample>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Rejects empty batches and log-probabilities that are non-finite or
    /// positive.
    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Empty("preference batch"));
        }
        for (i, e) in self.examples.iter().enumerate() {
            let mut vals = alloc::vec![e.policy_chosen, e.policy_rejected, e.ref_chosen, e.ref_rejected];
            for c in [e.refine_after_rejected, e.refine_after_chosen].into_iter().flatten() {
                vals.extend(c.values());
            }
            if let Some(v) = vals.iter().find(|v| !v.is_finite() || **v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "example {i}: log-probability {v} is not a finite value <= 0"
                )));
            }
        }
        Ok(())
    }

    /// The six policy log-probabilities of every example, flattened in
    /// `PolicyGrad` order. Missing refinement contexts read as zero.
    pub fn policy_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 * self.len());
        for e in &self.examples {
            let a = e.refine_after_rejected;
            let b = e.refine_after_chosen;
            v.extend([
                e.policy_chosen,
                e.policy_rejected,
                a.map_or(0.0, |c| c.policy_chosen),
                a.map_or(0.0, |c| c.policy_rejected),
                b.map_or(0.0, |c| c.policy_chosen),
                b.map_or(0.0, |c| c.policy_rejected),
            ]);
        }
        v
    }

    /// Copy with the policy log-probabilities replaced by `v` (see
    /// `policy_vector`). Refinement entries of absent contexts are ignored.
    pub fn with_policy(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), 6 * self.len(), "policy vector length");
        let mut out = self.clone();
        for (e, p) in out.examples.iter_mut().zip(v.chunks(6)) {
            e.policy_chosen = p[0];
            e.policy_rejected = p[1];
            if let Some(c) = &mut e.refine_after_rejected {
                c.policy_chosen = p[2];
                c.policy_rejected = p[3];
            }
            if let Some(c) = &mut e.refine_after_chosen {
                c.policy_chosen = p[4];
                c.policy_rejected = p[5];
            }
        }
        out
    }
}

/// Gradient of a loss with respect to one example's policy log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyGrad {
    pub chosen: f64,
    pub rejected: f64,
    pub after_rejected_chosen: f64,
    pub after_rejected_rejected: f64,
    pub after_chosen_chosen: f64,
    pub after_chosen_rejected: f64,
}

impl PolicyGrad {
    fn scaled_add(&mut self, other: &PolicyGrad, k: f64) {
        self.chosen += k * other.chosen;
        self.rejected += k * other.rejected;
        self.after_rejected_chosen += k * other.after_rejected_chosen;
        self.after_rejected_rejected += k * other.after_rejected_rejected;
        self.after_chosen_chosen += k * other.after_chosen_chosen;
        self.after_chosen_rejected += k * other.after_chosen_rejected;
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.chosen,
            self.rejected,
            self.after_rejected_chosen,
            self.after_rejected_rejected,
            self.after_chosen_chosen,
            self.after_chosen_rejected,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWithGrad {
    pub loss: f64,
    /// One entry per example.
    pub grad: Vec<PolicyGrad>,
}

impl LossWithGrad {
    /// Gradient flattened in `PreferenceBatch::policy_vector` order.
    pub fn flat_grad(&self) -> Vec<f64> {
        self.grad.iter().flat_map(PolicyGrad::to_array).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta_dpo: f64,
    pub beta_refine: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta_dpo: 0.1,
            beta_refine: 0.01,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        check_beta(self.beta_dpo)?;
        check_beta(self.beta_refine)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `−log σ(z)` without overflow.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        libm::log1p(libm::exp(-z))
    } else {
        -z + libm::log1p(libm::exp(z))
    }
}

/// `mean −log σ(β · margin)`.
pub fn dpo_loss(batch: &PreferenceBatch, beta: f64) -> Result<LossWithGrad> {
    batch.validate()?;
    check_beta(beta)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch.len());
    for e in &batch.examples {
        let z = beta * e.margin();
        loss += neg_log_sigmoid(z);
        // d/dz −log σ(z) = −σ(−z)
        let g = -sigmoid(-z) * beta / n;
        grad.push(PolicyGrad {
            chosen: g,
            rejected: -g,
            ..PolicyGrad::default()
        });
    }
    Ok(LossWithGrad { loss: loss / n, grad })
}

/// Sum over the two refinement contexts of `mean (½ − β · margin)²`.
pub fn refine_loss(batch: &PreferenceBatch, beta: f64) -> Result<LossWithGrad> {
    batch.validate()?;
    check_beta(beta)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch.len());
    for (i, e) in batch.examples.iter().enumerate() {
        let (Some(a), Some(b)) = (e.refine_after_rejected, e.refine_after_chosen) else {
            return Err(Error::MissingRefinement(i));
        };
        let ba = 0.5 - beta * a.margin();
        let bb = 0.5 - beta * b.margin();
        loss += ba * ba + bb * bb;
        let ga = -2.0 * ba * beta / n;
        let gb = -2.0 * bb * beta / n;
        grad.push(PolicyGrad {
            after_rejected_chosen: ga,
            after_rejected_rejected: -ga,
            after_chosen_chosen: gb,
            after_chosen_rejected: -gb,
            ..PolicyGrad::default()
        });
    }
    Ok(LossWithGrad { loss: loss / n, grad })
}

/// `(1 − α) · L_DPO(β_dpo) + α · L_refine(β_refine)`. The endpoints `α = 0`
/// and `α = 1` return the component loss unchanged (the refinement fields are
/// not needed at `α = 0`).
pub fn aries_loss(batch: &PreferenceBatch, params: &LossParams) -> Result<LossWithGrad> {
    params.validate()?;
    if params.alpha == 0.0 {
        return dpo_loss(batch, params.beta_dpo);
    }
    let refine = refine_loss(batch, params.beta_refine)?;
    if params.alpha == 1.0 {
        return Ok(refine);
    }
    let dpo = dpo_loss(batch, params.beta_dpo)?;
    let a = params.alpha;
    let mut grad = alloc::vec![PolicyGrad::default(); batch.len()];
    for ((g, d), r) in grad.iter_mut().zip(&dpo.grad).zip(&refine.grad) {
        g.scaled_add(d, 1.0 - a);
        g.scaled_add(r, a);
    }
    Ok(LossWithGrad {
        loss: (1.0 - a) * dpo.loss + a * refine.loss,
        grad,
    })
}

/// Fraction of examples whose chosen response has the larger implicit reward
/// `β · log(π_θ / π_ref)`; exact ties count one half. Since `β > 0` only
/// rescales both rewards, the comparison is made on the log-ratios.
pub fn implicit_reward_accuracy(batch: &PreferenceBatch, beta: f64) -> Result<f64> {
    batch.validate()?;
    check_beta(beta)?;
    let score: f64 = batch
        .examples
        .iter()
        .map(|e| {
            let w = e.policy_chosen - e.ref_chosen;
            let l = e.policy_rejected - e.ref_rejected;
            if w > l {
                1.0
            } else if w == l {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(score / batch.len() as f64)
}

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cosine tail appended after the constant phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalCosine {
    pub start_step: u64,
    pub end_lr: f64,
}

/// Warmup, stable, decay, constant.
///
/// Warmup rises linearly from 0 to `peak_lr` over
/// `round(warmup_fraction · total_steps)` steps; the stable phase holds the
/// peak through `stable_end_step`; decay is linear down to `decay_end_lr` at
/// `decay_end_step`; `constant_lr` holds after that, optionally followed by a
/// cosine tail that ends at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsdcSchedule {
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub decay_end_lr: f64,
    pub stable_end_step: u64,
    pub decay_end_step: u64,
    pub constant_lr: f64,
    #[serde(default)]
    pub final_cosine: Option<FinalCosine>,
}

impl WsdcSchedule {
    /// Default rates with stable through 70% and decay through 90% of
    /// `total_steps`.
    pub fn with_total(total_steps: u64) -> Self {
        Self {
            total_steps,
            warmup_fraction: 0.01,
            peak_lr: 3e-4,
            decay_end_lr: 3e-5,
            stable_end_step: total_steps * 7 / 10,
            decay_end_step: total_steps * 9 / 10,
            constant_lr: 3e-5,
            final_cosine: None,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        (libm::round(self.warmup_fraction * self.total_steps as f64) as u64).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(alloc::format!("WSDC schedule: {m}")));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.peak_lr > self.decay_end_lr && self.decay_end_lr >= 0.0 && self.constant_lr >= 0.0) {
            return bad("need peak_lr > decay_end_lr >= 0");
        }
        if self.constant_lr > self.decay_end_lr {
            return bad("constant_lr must not exceed decay_end_lr");
        }
        let w = self.warmup_steps();
        if !(w <= self.stable_end_step
            && self.stable_end_step < self.decay_end_step
            && self.decay_end_step <= self.total_steps)
        {
            return bad("phase boundaries must satisfy warmup <= stable_end < decay_end <= total");
        }
        if let Some(c) = self.final_cosine {
            if !(c.start_step >= self.decay_end_step && c.start_step < self.total_steps) {
                return bad("final cosine must start after decay and before the last step");
            }
            if !(c.end_lr >= 0.0 && c.end_lr <= self.constant_lr) {
                return bad("final cosine end_lr must lie in [0, constant_lr]");
            }
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Learning rate at `step`. Phase end points return their nominal rate
/// exactly.
pub fn wsdc_lr(step: u64, s: &WsdcSchedule) -> Result<f64> {
    s.validate()?;
    if step > s.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: s.total_steps,
        });
    }
    let w = s.warmup_steps();
    if step < w {
        return Ok(s.peak_lr * (step as f64 / w as f64));
    }
    if step <= s.stable_end_step {
        return Ok(s.peak_lr);
    }
    if step < s.decay_end_step {
        let t = (step - s.stable_end_step) as f64 / (s.decay_end_step - s.stable_end_step) as f64;
        return Ok(lerp(s.peak_lr, s.decay_end_lr, t));
    }
    if step == s.decay_end_step {
        return Ok(s.decay_end_lr);
    }
    match s.final_cosine {
        Some(c) if step > c.start_step => Ok(cosine_lr(
            step - c.start_step,
            s.constant_lr,
            c.end_lr,
            s.total_steps - c.start_step,
        )?),
        _ => Ok(s.constant_lr),
    }
}

/// Half-cosine from `peak` at step 0 to `min_lr` at `total`.
pub fn cosine_lr(step: u64, peak: f64, min_lr: f64, total: u64) -> Result<f64> {
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    if total == 0 || step == 0 {
        return Ok(peak);
    }
    if step == total {
        return Ok(min_lr);
    }
    let progress = step as f64 / total as f64;
    Ok(min_lr + (peak - min_lr) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_are_exact() {
        let s = WsdcSchedule::with_total(10_000);
        assert_eq!(wsdc_lr(0, &s).unwrap(), 0.0);
        assert_eq!(wsdc_lr(s.warmup_steps(), &s).unwrap(), 3e-4);
        assert_eq!(wsdc_lr(5_000, &s).unwrap(), 3e-4);
        assert_eq!(wsdc_lr(s.decay_end_step, &s).unwrap(), 3e-5);
        assert_eq!(wsdc_lr(10_000, &s).unwrap(), 3e-5);
        assert!(wsdc_lr(10_001, &s).is_err());
    }

    #[test]
    fn cosine_midpoint() {
        assert_eq!(cosine_lr(0, 1.0, 0.1, 100).unwrap(), 1.0);
        assert_eq!(cosine_lr(100, 1.0, 0.1, 100).unwrap(), 0.1);
        assert!((cosine_lr(50, 1.0, 0.1, 100).unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn final_cosine_tail() {
        let mut s = WsdcSchedule::with_total(1000);
        s.final_cosine = Some(FinalCosine {
            start_step: 950,
            end_lr: 0.0,
        });
        assert_eq!(wsdc_lr(950, &s).unwrap(), 3e-5);
        assert_eq!(wsdc_lr(1000, &s).unwrap(), 0.0);
        assert!(wsdc_lr(975, &s).unwrap() < 3e-5);
    }
}

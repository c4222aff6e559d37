//! Feed-forward blocks and activation sparsity.
//!
//! The squared-ReLU block has no gate: `down(relu2(up(h)))`. The SwiGLU
//! baseline is `down(silu(gate(h)) ⊙ up(h))`. Neither has biases.

mod sparsity;

pub use sparsity::{
    activation_sparsity_measure, determine_sparsity_rate, executed_params, executed_params_for_total, mask_smallest,
    sparsity_sweep, zero_fraction, Calibration, Masked, SparsityOptions, SparsityReport, SweepRow,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::LayerOps;
use crate::tensor::{Linear, Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu2,
    Swiglu,
}

impl Activation {
    pub fn is_gated(self) -> bool {
        matches!(self, Activation::Swiglu)
    }

    /// Projections per block: two for relu2, three for swiglu.
    pub fn projections(self) -> usize {
        if self.is_gated() {
            3
        } else {
            2
        }
    }
}

/// `max(0, x)²`.
pub fn relu2(x: f32) -> f32 {
    if x > 0.0 {
        x * x
    } else {
        0.0
    }
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnConfig {
    pub d_model: usize,
    pub d_ffn: usize,
    pub activation: Activation,
}

impl FfnConfig {
    pub fn gated(&self) -> bool {
        self.activation.is_gated()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ffn == 0 {
            return Err(Error::InvalidConfig(format!(
                "FFN dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Observes (and may edit) each post-activation vector before the down
/// projection. `layer` is the decoder layer index.
pub trait ActivationHook {
    fn on_activation(&mut self, layer: usize, x: &mut [f32]);
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl ActivationHook for NoHook {
    fn on_activation(&mut self, _layer: usize, _x: &mut [f32]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    /// `d_ffn × d`.
    pub up: Linear,
    /// `d_ffn × d`, present only for gated activations.
    pub gate: Option<Linear>,
    /// `d × d_ffn`.
    pub down: Linear,
}

impl FfnWeights {
    pub fn random(cfg: &FfnConfig, rng: &mut Rng, std: f64) -> Self {
        let gate = cfg
            .gated()
            .then(|| Linear::Dense(rng.normal_matrix(cfg.d_ffn, cfg.d_model, std)));
        Self {
            up: Linear::Dense(rng.normal_matrix(cfg.d_ffn, cfg.d_model, std)),
            gate,
            down: Linear::Dense(rng.normal_matrix(cfg.d_model, cfg.d_ffn, std)),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Linear)> {
        let mut v = vec![("up", &self.up)];
        if let Some(g) = &self.gate {
            v.push(("gate", g));
        }
        v.push(("down", &self.down));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Linear)> {
        let mut v: Vec<(&'static str, &mut Linear)> = vec![("up", &mut self.up)];
        if let Some(g) = &mut self.gate {
            v.push(("gate", g));
        }
        v.push(("down", &mut self.down));
        v
    }

    pub fn validate(&self, cfg: &FfnConfig) -> Result<()> {
        let shape = |w: &Linear| (w.out_features(), w.in_features());
        if shape(&self.up) != (cfg.d_ffn, cfg.d_model) || shape(&self.down) != (cfg.d_model, cfg.d_ffn) {
            return Err(Error::Shape(format!("FFN weights do not match {cfg:?}")));
        }
        match (&self.gate, cfg.gated()) {
            (Some(g), true) if shape(g) == (cfg.d_ffn, cfg.d_model) => Ok(()),
            (None, false) => Ok(()),
            _ => Err(Error::Shape("gate projection does not match activation".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnLayer {
    cfg: FfnConfig,
    weights: FfnWeights,
}

impl FfnLayer {
    pub fn new(cfg: FfnConfig, weights: FfnWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&cfg)?;
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> &FfnConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &FfnWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut FfnWeights {
        &mut self.weights
    }

    /// Post-activation vector for one input row.
    pub fn activation(&self, h: &[f32], ops: &mut LayerOps) -> Vec<f32> {
        let mut x = self.weights.up.apply_vec(h);
        ops.ffn += self.weights.up.numel() as u64;
        match (&self.weights.gate, self.cfg.activation) {
            (Some(gate), Activation::Swiglu) => {
                let g = gate.apply_vec(h);
                ops.ffn += gate.numel() as u64;
                for (xi, gi) in x.iter_mut().zip(g) {
                    *xi *= silu(gi);
                }
            }
            _ => x.iter_mut().for_each(|v| *v = relu2(*v)),
        }
        x
    }

    pub fn forward_row(&self, h: &[f32], layer: usize, hook: &mut dyn ActivationHook, ops: &mut LayerOps) -> Vec<f32> {
        let mut x = self.activation(h, ops);
        hook.on_activation(layer, &mut x);
        ops.ffn += self.weights.down.numel() as u64;
        self.weights.down.apply_vec(&x)
    }
}

/// Applies the block to every row of `h`.
pub fn ffn_forward(cfg: &FfnConfig, weights: &FfnWeights, h: &Matrix) -> Result<Matrix> {
    let layer = FfnLayer::new(*cfg, weights.clone())?;
    if h.cols() != cfg.d_model {
        return Err(Error::Shape(format!("input width {} != {}", h.cols(), cfg.d_model)));
    }
    let mut out = Matrix::zeros(h.rows(), cfg.d_model);
    let mut ops = LayerOps::default();
    for t in 0..h.rows() {
        let y = layer.forward_row(h.row(t), 0, &mut NoHook, &mut ops);
        out.row_mut(t).copy_from_slice(&y);
    }
    Ok(out)
}

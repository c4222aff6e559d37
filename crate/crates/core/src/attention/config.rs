use alloc::format;

use crate::tensor::DEFAULT_THETA_BASE;
use crate::{Error, Result};

/// Shape of one multi-head latent attention layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlaLayerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Per-head content dimension.
    pub d_nope: usize,
    /// Per-head decoupled rotary dimension.
    pub d_rope: usize,
    /// Latent KV dimension `d_c`.
    pub kv_rank: usize,
    /// Query latent dimension; `None` means queries are projected directly.
    pub q_rank: Option<usize>,
    pub theta_base: f64,
}

impl MlaLayerConfig {
    pub fn new(d_model: usize, n_heads: usize, d_nope: usize, d_rope: usize, kv_rank: usize) -> Self {
        Self {
            d_model,
            n_heads,
            d_nope,
            d_rope,
            kv_rank,
            q_rank: None,
            theta_base: DEFAULT_THETA_BASE,
        }
    }

    pub fn with_q_rank(mut self, q_rank: usize) -> Self {
        self.q_rank = Some(q_rank);
        self
    }

    /// `d_h = d_nope + d_rope`.
    pub fn d_head(&self) -> usize {
        self.d_nope + self.d_rope
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_model, self.n_heads, self.d_nope, self.d_rope, self.kv_rank];
        if dims.contains(&0) || self.q_rank == Some(0) {
            return Err(Error::InvalidConfig(format!(
                "MLA dimensions must be positive: {self:?}"
            )));
        }
        if !self.d_rope.is_multiple_of(2) {
            return Err(Error::Shape(format!("d_rope {} is odd", self.d_rope)));
        }
        Ok(())
    }
}

/// Shape of one grouped-query attention layer. `n_kv_heads = 1` is MQA and
/// `n_kv_heads = n_heads` is MHA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GqaLayerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_head: usize,
    pub theta_base: f64,
}

impl GqaLayerConfig {
    pub fn new(d_model: usize, n_heads: usize, n_kv_heads: usize, d_head: usize) -> Self {
        Self {
            d_model,
            n_heads,
            n_kv_heads,
            d_head,
            theta_base: DEFAULT_THETA_BASE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.d_model, self.n_heads, self.n_kv_heads, self.d_head].contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "GQA dimensions must be positive: {self:?}"
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(Error::Shape(format!("d_head {} is odd", self.d_head)));
        }
        Ok(())
    }
}

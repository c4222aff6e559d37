use alloc::vec;
use alloc::vec::Vec;
use core::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Multiply-accumulates executed inside one decoder layer, by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    /// Q/K/V/latent/output projections.
    pub attn_proj: u64,
    /// Rotary rotations, two multiplies per rotated element.
    pub rope: u64,
    /// Query-key scores and probability-value products.
    pub attn_scores: u64,
    pub ffn: u64,
    /// Always zero: normalization is not a MAC-bearing op.
    pub norms: u64,
}

impl LayerOps {
    pub fn macs(&self) -> u64 {
        self.attn_proj + self.rope + self.attn_scores + self.ffn + self.norms
    }

    pub fn attention(&self) -> u64 {
        self.attn_proj + self.rope + self.attn_scores
    }
}

impl AddAssign for LayerOps {
    fn add_assign(&mut self, rhs: Self) {
        self.attn_proj += rhs.attn_proj;
        self.rope += rhs.rope;
        self.attn_scores += rhs.attn_scores;
        self.ffn += rhs.ffn;
        self.norms += rhs.norms;
    }
}

/// Instrumented MAC tally of a forward pass. FLOPs are `2 × MACs`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub layers: Vec<LayerOps>,
    pub lm_head: u64,
    /// Embedding lookups are gathers and always count zero.
    pub embedding: u64,
}

impl OpCounter {
    pub fn new(n_layers: usize) -> Self {
        Self {
            layers: vec![LayerOps::default(); n_layers],
            lm_head: 0,
            embedding: 0,
        }
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(LayerOps::macs).sum::<u64>() + self.lm_head + self.embedding
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }

    /// Sum of the per-layer breakdowns.
    pub fn totals(&self) -> LayerOps {
        let mut t = LayerOps::default();
        for l in &self.layers {
            t += *l;
        }
        t
    }

    pub fn merge(&mut self, other: &OpCounter) {
        if self.layers.len() < other.layers.len() {
            self.layers.resize(other.layers.len(), LayerOps::default());
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += *b;
        }
        self.lm_head += other.lm_head;
        self.embedding += other.embedding;
    }
}

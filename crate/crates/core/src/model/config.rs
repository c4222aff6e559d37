use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::attention::{GqaLayerConfig, MlaLayerConfig};
use crate::ffn::{Activation, FfnConfig};
use crate::tensor::DEFAULT_THETA_BASE;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Mla,
    Gqa,
    Mqa,
    Mha,
}

impl AttentionKind {
    pub fn is_mla(self) -> bool {
        matches!(self, AttentionKind::Mla)
    }
}

/// Architectural hyperparameters of a decoder-only model.
///
/// For MLA, `d_nope`/`d_rope` are the per-head content and rotary widths and
/// `kv_rank` is the latent width. For the grouped kinds the head width is
/// `d_nope + d_rope` and rotary embedding covers the whole head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub attention_kind: AttentionKind,
    pub d_nope: usize,
    pub d_rope: usize,
    pub kv_rank: usize,
    #[serde(default)]
    pub q_rank: Option<usize>,
    pub d_ffn: usize,
    pub activation: Activation,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Full head width `d_h = d_nope + d_rope`.
    pub fn d_head(&self) -> usize {
        self.d_nope + self.d_rope
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_nope", self.d_nope),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        match self.attention_kind {
            AttentionKind::Mla => {
                if self.kv_rank == 0 {
                    return err("mla requires kv_rank > 0".into());
                }
                self.mla_layer()?.validate()?;
            }
            kind => {
                if self.q_rank.is_some() {
                    return err(format!("q_rank is only meaningful for mla, not {kind:?}"));
                }
                match kind {
                    AttentionKind::Mqa if self.n_kv_heads != 1 => return err("mqa requires n_kv_heads = 1".into()),
                    AttentionKind::Mha if self.n_kv_heads != self.n_heads => {
                        return err("mha requires n_kv_heads = n_heads".into())
                    }
                    _ => {}
                }
                self.gqa_layer()?.validate()?;
            }
        }
        Ok(())
    }

    pub fn mla_layer(&self) -> Result<MlaLayerConfig> {
        if !self.attention_kind.is_mla() {
            return Err(Error::InvalidConfig("not an mla config".into()));
        }
        Ok(MlaLayerConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_nope: self.d_nope,
            d_rope: self.d_rope,
            kv_rank: self.kv_rank,
            q_rank: self.q_rank,
            theta_base: DEFAULT_THETA_BASE,
        })
    }

    pub fn gqa_layer(&self) -> Result<GqaLayerConfig> {
        if self.attention_kind.is_mla() {
            return Err(Error::InvalidConfig("not a grouped-query config".into()));
        }
        Ok(GqaLayerConfig::new(
            self.d_model,
            self.n_heads,
            self.n_kv_heads,
            self.d_head(),
        ))
    }

    pub fn ffn(&self) -> FfnConfig {
        FfnConfig {
            d_model: self.d_model,
            d_ffn: self.d_ffn,
            activation: self.activation,
        }
    }

    /// Cached values per token per layer: `d_c + d_rope` or `2·n_kv·d_h`.
    pub fn cache_values_per_token(&self) -> usize {
        if self.attention_kind.is_mla() {
            self.kv_rank + self.d_rope
        } else {
            2 * self.n_kv_heads * self.d_head()
        }
    }
}

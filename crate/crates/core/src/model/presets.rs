//! Named configurations.

use alloc::vec::Vec;

use super::{AttentionKind, ModelConfig};
use crate::ffn::Activation;

const PLM_VOCAB: usize = 151_936;

/// The released 1.8B model: 32 layers, MLA with a 512-wide latent,
/// uncompressed queries, squared-ReLU FFN.
pub fn plm_1_8b() -> ModelConfig {
    ModelConfig {
        n_layers: 32,
        d_model: 2048,
        n_heads: 16,
        n_kv_heads: 16,
        attention_kind: AttentionKind::Mla,
        d_nope: 128,
        d_rope: 64,
        kv_rank: 512,
        q_rank: None,
        d_ffn: 8192,
        activation: Activation::Relu2,
        vocab_size: PLM_VOCAB,
        max_seq_len: 4096,
        tie_embeddings: true,
    }
}

/// The 1.8B shape with 16-head GQA (`d_h = 192`) in place of MLA.
pub fn plm_1_8b_gqa() -> ModelConfig {
    ModelConfig {
        attention_kind: AttentionKind::Gqa,
        kv_rank: 0,
        ..plm_1_8b()
    }
}

/// Desk-scale model used by property tests and benchmarks.
pub fn plm_micro() -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        d_model: 128,
        n_heads: 4,
        n_kv_heads: 4,
        attention_kind: AttentionKind::Mla,
        d_nope: 16,
        d_rope: 8,
        kv_rank: 32,
        q_rank: None,
        d_ffn: 512,
        activation: Activation::Relu2,
        vocab_size: 512,
        max_seq_len: 1024,
        tie_embeddings: true,
    }
}

fn micro_grouped(kind: AttentionKind, n_kv_heads: usize) -> ModelConfig {
    ModelConfig {
        attention_kind: kind,
        n_kv_heads,
        kv_rank: 0,
        ..plm_micro()
    }
}

type Row = (usize, usize, usize, usize, usize, usize, usize, usize);

/// Architecture-search candidates (query compression on), in table order.
pub fn search_candidates() -> Vec<(&'static str, ModelConfig)> {
    // (layers, d_model, heads, d_head, d_ffn, kv_rank, q_rank, d_rope)
    let rows: [Row; 7] = [
        (28, 2816, 44, 64, 7040, 256, 768, 32),
        (32, 2304, 36, 64, 5760, 256, 768, 32),
        (32, 2560, 40, 64, 6400, 256, 768, 32),
        (36, 2304, 36, 64, 5760, 256, 768, 32),
        (40, 2304, 36, 64, 5760, 256, 768, 32),
        (36, 2048, 32, 64, 8192, 256, 768, 32),
        (32, 2048, 16, 128, 8192, 512, 1536, 64),
    ];
    const NAMES: [&str; 7] = ["cand-1", "cand-2", "cand-3", "cand-4", "cand-5", "cand-6", "cand-7"];
    NAMES
        .iter()
        .zip(rows)
        .map(|(name, (l, d, h, dh, f, kv, q, r))| {
            (
                *name,
                ModelConfig {
                    n_layers: l,
                    d_model: d,
                    n_heads: h,
                    n_kv_heads: h,
                    attention_kind: AttentionKind::Mla,
                    d_nope: dh,
                    d_rope: r,
                    kv_rank: kv,
                    q_rank: Some(q),
                    d_ffn: f,
                    activation: Activation::Relu2,
                    vocab_size: PLM_VOCAB,
                    max_seq_len: 4096,
                    tie_embeddings: true,
                },
            )
        })
        .collect()
}

/// Every built-in preset, by name.
pub fn all() -> Vec<(&'static str, ModelConfig)> {
    let mut v = alloc::vec![
        ("plm-1.8b", plm_1_8b()),
        ("plm-1.8b-gqa", plm_1_8b_gqa()),
        ("plm-micro", plm_micro()),
        (
            "plm-micro-q",
            ModelConfig {
                q_rank: Some(48),
                ..plm_micro()
            }
        ),
        (
            "plm-micro-swiglu",
            ModelConfig {
                activation: Activation::Swiglu,
                ..plm_micro()
            }
        ),
        ("gqa-micro", micro_grouped(AttentionKind::Gqa, 2)),
        ("mqa-micro", micro_grouped(AttentionKind::Mqa, 1)),
        ("mha-micro", micro_grouped(AttentionKind::Mha, 4)),
    ];
    v.extend(search_candidates());
    v
}

pub fn by_name(name: &str) -> Option<ModelConfig> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, c)| c)
}

/// Presets small enough to instantiate and run at desk scale.
pub fn desk_scale() -> Vec<(&'static str, ModelConfig)> {
    all()
        .into_iter()
        .filter(|(_, c)| c.d_model <= 256 && c.vocab_size <= 4096)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for (name, cfg) in all() {
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(by_name("plm-1.8b").unwrap().d_model, 2048);
        assert!(by_name("nope").is_none());
        assert_eq!(desk_scale().len(), 6);
    }
}

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Parameter totals split the usual way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Token embedding table, plus the output head when it is not tied.
    pub embedding: u64,
    pub non_embedding: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.embedding + self.non_embedding
    }
}

/// Weights of one attention block, closed form.
pub fn attention_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.d_model as u64;
    let h = cfg.n_heads as u64;
    let nope = cfg.d_nope as u64;
    let rope = cfg.d_rope as u64;
    if cfg.attention_kind.is_mla() {
        let c = cfg.kv_rank as u64;
        let query = match cfg.q_rank {
            None => h * (nope + rope) * d,
            Some(r) => {
                let r = r as u64;
                r * d + r * h * (nope + rope)
            }
        };
        c * d + 2 * h * nope * c + rope * d + query + d * h * nope
    } else {
        let dh = cfg.d_head() as u64;
        let kv = cfg.n_kv_heads as u64;
        h * dh * d + 2 * kv * dh * d + d * h * dh
    }
}

pub fn ffn_params(cfg: &ModelConfig) -> u64 {
    cfg.activation.projections() as u64 * (cfg.d_model * cfg.d_ffn) as u64
}

/// Exact closed-form parameter counts.
pub fn count_params(cfg: &ModelConfig) -> ParamCount {
    let d = cfg.d_model as u64;
    let table = cfg.vocab_size as u64 * d;
    let embedding = if cfg.tie_embeddings { table } else { 2 * table };
    let per_layer = attention_params(cfg) + ffn_params(cfg) + 2 * d;
    ParamCount {
        embedding,
        non_embedding: cfg.n_layers as u64 * per_layer + d,
    }
}

/// Name and shape of every tensor a model allocates, in storage order.
pub fn weight_manifest(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![(String::from("embed"), vec![cfg.vocab_size, d])];
    for i in 0..cfg.n_layers {
        out.extend(layer_manifest(cfg, i));
    }
    out.push((String::from("final_norm"), vec![d]));
    if !cfg.tie_embeddings {
        out.push((String::from("output"), vec![cfg.vocab_size, d]));
    }
    out
}

/// Tensors of decoder layer `i`: norms are rank 1, projections `[out, in]`.
pub fn layer_manifest(cfg: &ModelConfig, i: usize) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let p = layer_prefix(i);
    let mut out = vec![(format!("{p}attn_norm"), vec![d])];
    for (name, shape) in layer_attention_shapes(cfg) {
        out.push((format!("{p}attn.{name}"), shape));
    }
    out.push((format!("{p}ffn_norm"), vec![d]));
    out.push((format!("{p}ffn.up"), vec![cfg.d_ffn, d]));
    if cfg.activation.is_gated() {
        out.push((format!("{p}ffn.gate"), vec![cfg.d_ffn, d]));
    }
    out.push((format!("{p}ffn.down"), vec![d, cfg.d_ffn]));
    out
}

fn layer_attention_shapes(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let d = cfg.d_model;
    let h = cfg.n_heads;
    if cfg.attention_kind.is_mla() {
        let mut v = vec![
            ("kv_down", vec![cfg.kv_rank, d]),
            ("k_up", vec![h * cfg.d_nope, cfg.kv_rank]),
            ("v_up", vec![h * cfg.d_nope, cfg.kv_rank]),
            ("k_rope", vec![cfg.d_rope, d]),
        ];
        match cfg.q_rank {
            None => {
                v.push(("q", vec![h * cfg.d_nope, d]));
                v.push(("q_rope", vec![h * cfg.d_rope, d]));
            }
            Some(r) => {
                v.push(("q_down", vec![r, d]));
                v.push(("q_up", vec![h * cfg.d_nope, r]));
                v.push(("q_rope", vec![h * cfg.d_rope, r]));
            }
        }
        v.push(("out", vec![d, h * cfg.d_nope]));
        v
    } else {
        let dh = cfg.d_head();
        vec![
            ("q", vec![h * dh, d]),
            ("k", vec![cfg.n_kv_heads * dh, d]),
            ("v", vec![cfg.n_kv_heads * dh, d]),
            ("out", vec![d, h * dh]),
        ]
    }
}

/// Tensor names belonging to layer `i`.
pub fn layer_prefix(i: usize) -> String {
    format!("layers.{i}.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    fn enumerate(cfg: &ModelConfig) -> ParamCount {
        let mut emb = 0u64;
        let mut rest = 0u64;
        for (name, shape) in weight_manifest(cfg) {
            let n: u64 = shape.iter().map(|&s| s as u64).product();
            if name == "embed" || name == "output" {
                emb += n;
            } else {
                rest += n;
            }
        }
        ParamCount {
            embedding: emb,
            non_embedding: rest,
        }
    }

    #[test]
    fn closed_form_matches_manifest_for_every_preset() {
        for (name, cfg) in presets::all() {
            assert_eq!(count_params(&cfg), enumerate(&cfg), "{name}");
        }
        let untied = ModelConfig {
            tie_embeddings: false,
            ..presets::plm_micro()
        };
        assert_eq!(count_params(&untied), enumerate(&untied));
    }

    #[test]
    fn plm_embedding_is_exact() {
        assert_eq!(count_params(&presets::plm_1_8b()).embedding, 311_164_928);
    }
}

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::mla::check_input;
use super::{masked_softmax, weighted_sum, GqaKvCache, GqaLayerConfig};
use crate::model::LayerOps;
use crate::tensor::{dot, Linear, Matrix, Rng, RopeTable};
use crate::{Error, Result};

/// Projection weights of one GQA layer; per-head blocks are stacked by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GqaWeights {
    /// `n_h·d_h × d`.
    pub q: Linear,
    /// `n_kv·d_h × d`.
    pub k: Linear,
    /// `n_kv·d_h × d`.
    pub v: Linear,
    /// `d × n_h·d_h`.
    pub out: Linear,
}

impl GqaWeights {
    pub fn random(cfg: &GqaLayerConfig, rng: &mut Rng, std: f64) -> Self {
        let d = cfg.d_model;
        let mut m = |r: usize, c: usize| Linear::Dense(rng.normal_matrix(r, c, std));
        Self {
            q: m(cfg.n_heads * cfg.d_head, d),
            k: m(cfg.n_kv_heads * cfg.d_head, d),
            v: m(cfg.n_kv_heads * cfg.d_head, d),
            out: m(d, cfg.n_heads * cfg.d_head),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Linear)> {
        vec![("q", &self.q), ("k", &self.k), ("v", &self.v), ("out", &self.out)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Linear)> {
        vec![
            ("q", &mut self.q),
            ("k", &mut self.k),
            ("v", &mut self.v),
            ("out", &mut self.out),
        ]
    }

    pub fn validate(&self, cfg: &GqaLayerConfig) -> Result<()> {
        let d = cfg.d_model;
        let expect = [
            (cfg.n_heads * cfg.d_head, d),
            (cfg.n_kv_heads * cfg.d_head, d),
            (cfg.n_kv_heads * cfg.d_head, d),
            (d, cfg.n_heads * cfg.d_head),
        ];
        for ((name, w), (r, c)) in self.tensors().into_iter().zip(expect) {
            if (w.out_features(), w.in_features()) != (r, c) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    w.out_features(),
                    w.in_features()
                )));
            }
        }
        Ok(())
    }
}

/// One grouped-query attention layer. Query head `i` reads KV head
/// `i mod n_kv_heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct GqaLayer {
    cfg: GqaLayerConfig,
    weights: GqaWeights,
    rope: RopeTable,
}

impl GqaLayer {
    pub fn new(cfg: GqaLayerConfig, weights: GqaWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&cfg)?;
        let rope = RopeTable::new(cfg.d_head, cfg.theta_base)?;
        Ok(Self { cfg, weights, rope })
    }

    pub fn config(&self) -> &GqaLayerConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &GqaWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut GqaWeights {
        &mut self.weights
    }

    pub fn new_cache(&self) -> GqaKvCache {
        GqaKvCache::new(self.cfg.n_kv_heads, self.cfg.d_head)
    }

    fn project(&self, h: &[f32], position: usize, ops: &mut LayerOps) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let w = &self.weights;
        let mut q = w.q.apply_vec(h);
        let mut k = w.k.apply_vec(h);
        let v = w.v.apply_vec(h);
        ops.attn_proj += (w.q.numel() + w.k.numel() + w.v.numel()) as u64;
        self.rope.rotate_heads(&mut q, position);
        self.rope.rotate_heads(&mut k, position);
        ops.rope += (2 * (self.cfg.n_heads + self.cfg.n_kv_heads) * self.cfg.d_head) as u64;
        (q, k, v)
    }

    fn attend(&self, q: &[f32], t: usize, keys: &[f32], values: &[f32], ops: &mut LayerOps) -> Vec<f32> {
        let cfg = &self.cfg;
        let dh = cfg.d_head;
        let kv_width = cfg.n_kv_heads * dh;
        let n_keys = keys.len() / kv_width;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut heads = vec![0.0f32; cfg.n_heads * dh];
        let mut scores = vec![0.0f64; n_keys];
        for i in 0..cfg.n_heads {
            let g = i % cfg.n_kv_heads;
            let qi = &q[i * dh..(i + 1) * dh];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &keys[j * kv_width + g * dh..j * kv_width + (g + 1) * dh];
                *s = dot(qi, kj) * scale;
            }
            masked_softmax(&mut scores, t);
            weighted_sum(&scores, values, kv_width, g * dh, dh, &mut heads[i * dh..(i + 1) * dh]);
        }
        ops.attn_scores += (2 * cfg.n_heads * n_keys * dh) as u64;
        ops.attn_proj += self.weights.out.numel() as u64;
        self.weights.out.apply_vec(&heads)
    }

    pub fn prefill(&self, h: &Matrix, positions: &[usize], ops: &mut LayerOps) -> Result<(Matrix, GqaKvCache)> {
        check_input(h, positions, self.cfg.d_model)?;
        let mut cache = self.new_cache();
        let mut queries = Vec::with_capacity(h.rows());
        for (t, &p) in positions.iter().enumerate() {
            let (q, k, v) = self.project(h.row(t), p, ops);
            cache.push(&k, &v, p);
            queries.push(q);
        }
        let mut out = Matrix::zeros(h.rows(), self.cfg.d_model);
        for (t, q) in queries.iter().enumerate() {
            let o = self.attend(q, t, cache.keys(), cache.values(), ops);
            out.row_mut(t).copy_from_slice(&o);
        }
        Ok((out, cache))
    }

    pub fn decode_step(
        &self,
        h: &[f32],
        cache: &mut GqaKvCache,
        position: usize,
        ops: &mut LayerOps,
    ) -> Result<Vec<f32>> {
        if h.len() != self.cfg.d_model {
            return Err(Error::Shape(format!(
                "hidden width {} != {}",
                h.len(),
                self.cfg.d_model
            )));
        }
        if let Some(last) = cache.last_position() {
            if position <= last {
                return Err(Error::Ordering { position, last });
            }
        }
        let (q, k, v) = self.project(h, position, ops);
        cache.push(&k, &v, position);
        let t = cache.len() - 1;
        Ok(self.attend(&q, t, cache.keys(), cache.values(), ops))
    }
}

pub fn gqa_prefill(
    cfg: &GqaLayerConfig,
    weights: &GqaWeights,
    h: &Matrix,
    positions: &[usize],
) -> Result<(Matrix, GqaKvCache)> {
    GqaLayer::new(*cfg, weights.clone())?.prefill(h, positions, &mut LayerOps::default())
}

pub fn gqa_decode_step(
    cfg: &GqaLayerConfig,
    weights: &GqaWeights,
    h: &[f32],
    cache: &mut GqaKvCache,
    position: usize,
) -> Result<Vec<f32>> {
    GqaLayer::new(*cfg, weights.clone())?.decode_step(h, cache, position, &mut LayerOps::default())
}

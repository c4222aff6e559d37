use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{masked_softmax, weighted_sum, MlaKvCache, MlaLayerConfig};
use crate::model::LayerOps;
use crate::tensor::{dot, Linear, Matrix, Rng, RopeTable};
use crate::{Error, Result};

/// Query path of an MLA layer.
#[derive(Debug, Clone, PartialEq)]
pub enum MlaQuery {
    /// `q^C = W_Q h` (`n_h·d_nope × d`) and `q^R = RoPE(W_QR h)` (`n_h·d_rope × d`).
    Direct { q: Linear, q_rope: Linear },
    /// `c^Q = W_DQ h` (`q_rank × d`), then `q^C = W_UQ c^Q` and
    /// `q^R = RoPE(W_QR c^Q)`.
    Compressed { down: Linear, up: Linear, q_rope: Linear },
}

/// Projection weights of one MLA layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlaWeights {
    /// `W_DKV`, `d_c × d`.
    pub kv_down: Linear,
    /// `W_UK` for all heads stacked, `n_h·d_nope × d_c`.
    pub k_up: Linear,
    /// `W_UV` for all heads stacked, `n_h·d_nope × d_c`.
    pub v_up: Linear,
    /// `W_KR`, `d_rope × d`, shared by every head.
    pub k_rope: Linear,
    pub query: MlaQuery,
    /// `W_O`, `d × n_h·d_nope`.
    pub out: Linear,
}

impl MlaWeights {
    pub fn random(cfg: &MlaLayerConfig, rng: &mut Rng, std: f64) -> Self {
        let d = cfg.d_model;
        let h = cfg.n_heads;
        let mut m = |r: usize, c: usize| Linear::Dense(rng.normal_matrix(r, c, std));
        let kv_down = m(cfg.kv_rank, d);
        let k_up = m(h * cfg.d_nope, cfg.kv_rank);
        let v_up = m(h * cfg.d_nope, cfg.kv_rank);
        let k_rope = m(cfg.d_rope, d);
        let query = match cfg.q_rank {
            None => MlaQuery::Direct {
                q: m(h * cfg.d_nope, d),
                q_rope: m(h * cfg.d_rope, d),
            },
            Some(r) => MlaQuery::Compressed {
                down: m(r, d),
                up: m(h * cfg.d_nope, r),
                q_rope: m(h * cfg.d_rope, r),
            },
        };
        let out = m(d, h * cfg.d_nope);
        Self {
            kv_down,
            k_up,
            v_up,
            k_rope,
            query,
            out,
        }
    }

    /// Named weights in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Linear)> {
        let mut v = vec![
            ("kv_down", &self.kv_down),
            ("k_up", &self.k_up),
            ("v_up", &self.v_up),
            ("k_rope", &self.k_rope),
        ];
        match &self.query {
            MlaQuery::Direct { q, q_rope } => {
                v.push(("q", q));
                v.push(("q_rope", q_rope));
            }
            MlaQuery::Compressed { down, up, q_rope } => {
                v.push(("q_down", down));
                v.push(("q_up", up));
                v.push(("q_rope", q_rope));
            }
        }
        v.push(("out", &self.out));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Linear)> {
        let mut v: Vec<(&'static str, &mut Linear)> = vec![
            ("kv_down", &mut self.kv_down),
            ("k_up", &mut self.k_up),
            ("v_up", &mut self.v_up),
            ("k_rope", &mut self.k_rope),
        ];
        match &mut self.query {
            MlaQuery::Direct { q, q_rope } => {
                v.push(("q", q));
                v.push(("q_rope", q_rope));
            }
            MlaQuery::Compressed { down, up, q_rope } => {
                v.push(("q_down", down));
                v.push(("q_up", up));
                v.push(("q_rope", q_rope));
            }
        }
        v.push(("out", &mut self.out));
        v
    }

    pub fn validate(&self, cfg: &MlaLayerConfig) -> Result<()> {
        let d = cfg.d_model;
        let h = cfg.n_heads;
        let mut expect = vec![
            ("kv_down", (cfg.kv_rank, d)),
            ("k_up", (h * cfg.d_nope, cfg.kv_rank)),
            ("v_up", (h * cfg.d_nope, cfg.kv_rank)),
            ("k_rope", (cfg.d_rope, d)),
        ];
        match (&self.query, cfg.q_rank) {
            (MlaQuery::Direct { .. }, None) => {
                expect.push(("q", (h * cfg.d_nope, d)));
                expect.push(("q_rope", (h * cfg.d_rope, d)));
            }
            (MlaQuery::Compressed { .. }, Some(r)) => {
                expect.push(("q_down", (r, d)));
                expect.push(("q_up", (h * cfg.d_nope, r)));
                expect.push(("q_rope", (h * cfg.d_rope, r)));
            }
            _ => return Err(Error::Shape("query path does not match q_rank".into())),
        }
        expect.push(("out", (d, h * cfg.d_nope)));
        for ((name, w), (_, (r, c))) in self.tensors().into_iter().zip(expect) {
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

/// Per-token projections shared by prefill and decode.
struct TokenState {
    latent: Vec<f32>,
    rope_key: Vec<f32>,
    q_nope: Vec<f32>,
    q_rope: Vec<f32>,
}

/// One MLA layer with its rotary table.
#[derive(Debug, Clone, PartialEq)]
pub struct MlaLayer {
    cfg: MlaLayerConfig,
    weights: MlaWeights,
    rope: RopeTable,
}

impl MlaLayer {
    pub fn new(cfg: MlaLayerConfig, weights: MlaWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&cfg)?;
        let rope = RopeTable::new(cfg.d_rope, cfg.theta_base)?;
        Ok(Self { cfg, weights, rope })
    }

    pub fn config(&self) -> &MlaLayerConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &MlaWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut MlaWeights {
        &mut self.weights
    }

    pub fn new_cache(&self) -> MlaKvCache {
        MlaKvCache::new(self.cfg.kv_rank, self.cfg.d_rope)
    }

    fn scale(&self) -> f64 {
        1.0 / libm::sqrt(self.cfg.d_head() as f64)
    }

    fn project(&self, h: &[f32], position: usize, ops: &mut LayerOps) -> TokenState {
        let w = &self.weights;
        let latent = w.kv_down.apply_vec(h);
        let mut rope_key = w.k_rope.apply_vec(h);
        ops.attn_proj += (w.kv_down.numel() + w.k_rope.numel()) as u64;
        let (q_nope, mut q_rope) = match &w.query {
            MlaQuery::Direct { q, q_rope } => {
                ops.attn_proj += (q.numel() + q_rope.numel()) as u64;
                (q.apply_vec(h), q_rope.apply_vec(h))
            }
            MlaQuery::Compressed { down, up, q_rope } => {
                let c = down.apply_vec(h);
                ops.attn_proj += (down.numel() + up.numel() + q_rope.numel()) as u64;
                (up.apply_vec(&c), q_rope.apply_vec(&c))
            }
        };
        self.rope.rotate(&mut rope_key, position);
        self.rope.rotate_heads(&mut q_rope, position);
        ops.rope += (2 * (self.cfg.n_heads + 1) * self.cfg.d_rope) as u64;
        TokenState {
            latent,
            rope_key,
            q_nope,
            q_rope,
        }
    }

    /// Up-projects every cached latent into per-head content keys and values.
    fn expand(&self, cache: &MlaKvCache, ops: &mut LayerOps) -> (Vec<f32>, Vec<f32>) {
        let width = self.cfg.n_heads * self.cfg.d_nope;
        let n = cache.len();
        let mut keys = vec![0.0; n * width];
        let mut values = vec![0.0; n * width];
        for t in 0..n {
            self.weights
                .k_up
                .apply(cache.latent(t), &mut keys[t * width..(t + 1) * width]);
            self.weights
                .v_up
                .apply(cache.latent(t), &mut values[t * width..(t + 1) * width]);
        }
        ops.attn_proj += (n * (self.weights.k_up.numel() + self.weights.v_up.numel())) as u64;
        (keys, values)
    }

    /// Attention output for one query against `n_keys` keys, the query at
    /// index `t`; keys past `t` are masked after scoring.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        state: &TokenState,
        t: usize,
        n_keys: usize,
        keys: &[f32],
        values: &[f32],
        rope_keys: &[f32],
        ops: &mut LayerOps,
    ) -> Vec<f32> {
        let cfg = &self.cfg;
        let width = cfg.n_heads * cfg.d_nope;
        let scale = self.scale();
        let mut heads = vec![0.0f32; width];
        let mut scores = vec![0.0f64; n_keys];
        for i in 0..cfg.n_heads {
            let qn = &state.q_nope[i * cfg.d_nope..(i + 1) * cfg.d_nope];
            let qr = &state.q_rope[i * cfg.d_rope..(i + 1) * cfg.d_rope];
            for (j, s) in scores.iter_mut().enumerate() {
                let kn = &keys[j * width + i * cfg.d_nope..j * width + (i + 1) * cfg.d_nope];
                let kr = &rope_keys[j * cfg.d_rope..(j + 1) * cfg.d_rope];
                *s = (dot(qn, kn) + dot(qr, kr)) * scale;
            }
            masked_softmax(&mut scores, t);
            weighted_sum(
                &scores,
                values,
                width,
                i * cfg.d_nope,
                cfg.d_nope,
                &mut heads[i * cfg.d_nope..(i + 1) * cfg.d_nope],
            );
        }
        ops.attn_scores += (cfg.n_heads * n_keys * (cfg.d_head() + cfg.d_nope)) as u64;
        ops.attn_proj += self.weights.out.numel() as u64;
        self.weights.out.apply_vec(&heads)
    }

    /// Causal attention over `h` (one row per token) at `positions`.
    pub fn prefill(&self, h: &Matrix, positions: &[usize], ops: &mut LayerOps) -> Result<(Matrix, MlaKvCache)> {
        check_input(h, positions, self.cfg.d_model)?;
        let mut cache = self.new_cache();
        let mut states = Vec::with_capacity(h.rows());
        for (t, &p) in positions.iter().enumerate() {
            let s = self.project(h.row(t), p, ops);
            cache.push(&s.latent, &s.rope_key, p);
            states.push(s);
        }
        let (keys, values) = self.expand(&cache, ops);
        let n = h.rows();
        let mut out = Matrix::zeros(n, self.cfg.d_model);
        for (t, s) in states.iter().enumerate() {
            let o = self.attend(s, t, n, &keys, &values, cache.rope_keys(), ops);
            out.row_mut(t).copy_from_slice(&o);
        }
        Ok((out, cache))
    }

    /// Processes one token at `position` against `cache`, appending its
    /// latent and rotary key.
    pub fn decode_step(
        &self,
        h: &[f32],
        cache: &mut MlaKvCache,
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
        let s = self.project(h, position, ops);
        cache.push(&s.latent, &s.rope_key, position);
        let (keys, values) = self.expand(cache, ops);
        let n = cache.len();
        Ok(self.attend(&s, n - 1, n, &keys, &values, cache.rope_keys(), ops))
    }
}

pub(crate) fn check_input(h: &Matrix, positions: &[usize], d_model: usize) -> Result<()> {
    if h.cols() != d_model {
        return Err(Error::Shape(format!("hidden width {} != {d_model}", h.cols())));
    }
    if positions.len() != h.rows() {
        return Err(Error::Shape(format!(
            "{} positions for {} tokens",
            positions.len(),
            h.rows()
        )));
    }
    if h.rows() == 0 {
        return Err(Error::Empty("attention input"));
    }
    if positions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Shape("positions must be strictly increasing".into()));
    }
    Ok(())
}

/// Uncounted MLA prefill.
pub fn mla_prefill(
    cfg: &MlaLayerConfig,
    weights: &MlaWeights,
    h: &Matrix,
    positions: &[usize],
) -> Result<(Matrix, MlaKvCache)> {
    MlaLayer::new(*cfg, weights.clone())?.prefill(h, positions, &mut LayerOps::default())
}

/// Uncounted MLA decode step.
pub fn mla_decode_step(
    cfg: &MlaLayerConfig,
    weights: &MlaWeights,
    h: &[f32],
    cache: &mut MlaKvCache,
    position: usize,
) -> Result<Vec<f32>> {
    MlaLayer::new(*cfg, weights.clone())?.decode_step(h, cache, position, &mut LayerOps::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BitWidth;

    fn tiny() -> (MlaLayer, Matrix) {
        let cfg = MlaLayerConfig::new(8, 2, 4, 2, 4);
        let mut rng = Rng::new(21);
        let layer = MlaLayer::new(cfg, MlaWeights::random(&cfg, &mut rng, 0.5)).unwrap();
        let h = rng.normal_matrix(5, 8, 1.0);
        (layer, h)
    }

    #[test]
    fn single_token_returns_projected_values() {
        let (layer, h) = tiny();
        let h1 = Matrix::from_vec(1, 8, h.row(0).to_vec()).unwrap();
        let (out, cache) = layer.prefill(&h1, &[0], &mut LayerOps::default()).unwrap();
        let w = layer.weights();
        let v = w.v_up.apply_vec(&w.kv_down.apply_vec(h.row(0)));
        let expect = w.out.apply_vec(&v);
        for (a, b) in out.row(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn decode_replays_prefill() {
        let (layer, h) = tiny();
        let positions: Vec<usize> = (0..5).collect();
        let (full, _) = layer.prefill(&h, &positions, &mut LayerOps::default()).unwrap();
        let mut cache = layer.new_cache();
        for t in 0..5 {
            let before = cache.bytes(BitWidth::Sixteen);
            let o = layer
                .decode_step(h.row(t), &mut cache, t, &mut LayerOps::default())
                .unwrap();
            assert_eq!(cache.bytes(BitWidth::Sixteen) - before, ((2 + 4) * 2) as u64);
            for (a, b) in o.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn decode_rejects_stale_position() {
        let (layer, h) = tiny();
        let mut cache = layer.new_cache();
        let mut ops = LayerOps::default();
        layer.decode_step(h.row(0), &mut cache, 3, &mut ops).unwrap();
        assert_eq!(
            layer.decode_step(h.row(1), &mut cache, 3, &mut ops),
            Err(Error::Ordering { position: 3, last: 3 })
        );
    }

    #[test]
    fn odd_rope_dimension_rejected() {
        let cfg = MlaLayerConfig::new(8, 2, 4, 3, 4);
        assert!(matches!(cfg.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_shapes_checked() {
        let cfg = MlaLayerConfig::new(8, 2, 4, 2, 4);
        let mut w = MlaWeights::random(&cfg, &mut Rng::new(1), 0.1);
        w.out = Linear::Dense(Matrix::zeros(8, 7));
        assert!(matches!(MlaLayer::new(cfg, w), Err(Error::Shape(_))));
    }
}

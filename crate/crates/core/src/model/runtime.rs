use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{layer_manifest, weight_manifest, LayerOps, ModelConfig, OpCounter};
use crate::attention::{GqaLayer, GqaWeights, KvCache, MlaLayer, MlaQuery, MlaWeights};
use crate::ffn::{ActivationHook, FfnLayer, FfnWeights, NoHook};
use crate::tensor::{BitWidth, Linear, Matrix, Rng};
use crate::{Error, Result};

/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.008;
/// RMSNorm epsilon.
pub const RMS_EPS: f64 = 1e-6;

/// `x / sqrt(mean(x²) + eps) ⊙ gain`.
pub fn rms_norm(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let ss = x.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / libm::sqrt(ss + RMS_EPS);
    x.iter()
        .zip(gain)
        .map(|(v, g)| (f64::from(*v) * inv * f64::from(*g)) as f32)
        .collect()
}

fn add_into(acc: &mut [f32], delta: &[f32]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a += d;
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum AttentionLayer {
    Mla(MlaLayer),
    Gqa(GqaLayer),
}

impl AttentionLayer {
    pub fn tensors(&self) -> Vec<(&'static str, &Linear)> {
        match self {
            AttentionLayer::Mla(l) => l.weights().tensors(),
            AttentionLayer::Gqa(l) => l.weights().tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Linear)> {
        match self {
            AttentionLayer::Mla(l) => l.weights_mut().tensors_mut(),
            AttentionLayer::Gqa(l) => l.weights_mut().tensors_mut(),
        }
    }

    /// The output projection `W_O`.
    pub fn out_mut(&mut self) -> &mut Linear {
        match self {
            AttentionLayer::Mla(l) => &mut l.weights_mut().out,
            AttentionLayer::Gqa(l) => &mut l.weights_mut().out,
        }
    }

    pub fn new_cache(&self) -> KvCache {
        match self {
            AttentionLayer::Mla(l) => KvCache::Mla(l.new_cache()),
            AttentionLayer::Gqa(l) => KvCache::Gqa(l.new_cache()),
        }
    }
}

/// One pre-norm decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub attn_norm: Vec<f32>,
    pub attention: AttentionLayer,
    pub ffn_norm: Vec<f32>,
    pub ffn: FfnLayer,
}

type TensorGetter<'a> = dyn FnMut(&str, &[usize]) -> Result<Vec<f32>> + 'a;

impl Layer {
    /// Assembles layer `index` from named tensors (see `layer_manifest`).
    pub fn from_tensors(cfg: &ModelConfig, index: usize, get: &mut TensorGetter<'_>) -> Result<Self> {
        let mut parts: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for (name, shape) in layer_manifest(cfg, index) {
            let data = get(&name, &shape)?;
            let suffix = String::from(&name[super::layer_prefix(index).len()..]);
            parts.insert(suffix, (shape, data));
        }
        let mut vector = |name: &str| -> Result<Vec<f32>> {
            let (_, data) = parts.remove(name).expect("manifest entry");
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("norm gain"));
            }
            Ok(data)
        };
        let attn_norm = vector("attn_norm")?;
        let ffn_norm = vector("ffn_norm")?;
        let mut mat = |name: &str| -> Result<Linear> {
            let (shape, data) = parts
                .remove(name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))?;
            Ok(Linear::Dense(Matrix::from_vec(shape[0], shape[1], data)?))
        };
        let attention = if cfg.attention_kind.is_mla() {
            let mcfg = cfg.mla_layer()?;
            let kv_down = mat("attn.kv_down")?;
            let k_up = mat("attn.k_up")?;
            let v_up = mat("attn.v_up")?;
            let k_rope = mat("attn.k_rope")?;
            let query = match cfg.q_rank {
                None => MlaQuery::Direct {
                    q: mat("attn.q")?,
                    q_rope: mat("attn.q_rope")?,
                },
                Some(_) => MlaQuery::Compressed {
                    down: mat("attn.q_down")?,
                    up: mat("attn.q_up")?,
                    q_rope: mat("attn.q_rope")?,
                },
            };
            let out = mat("attn.out")?;
            let w = MlaWeights {
                kv_down,
                k_up,
                v_up,
                k_rope,
                query,
                out,
            };
            AttentionLayer::Mla(MlaLayer::new(mcfg, w)?)
        } else {
            let w = GqaWeights {
                q: mat("attn.q")?,
                k: mat("attn.k")?,
                v: mat("attn.v")?,
                out: mat("attn.out")?,
            };
            AttentionLayer::Gqa(GqaLayer::new(cfg.gqa_layer()?, w)?)
        };
        let up = mat("ffn.up")?;
        let gate = if cfg.activation.is_gated() {
            Some(mat("ffn.gate")?)
        } else {
            None
        };
        let down = mat("ffn.down")?;
        let ffn = FfnLayer::new(cfg.ffn(), FfnWeights { up, gate, down })?;
        Ok(Self {
            attn_norm,
            attention,
            ffn_norm,
            ffn,
        })
    }

    /// Every projection with its name relative to the layer.
    pub fn linears(&self) -> Vec<(String, &Linear)> {
        let mut v: Vec<(String, &Linear)> = self
            .attention
            .tensors()
            .into_iter()
            .map(|(n, w)| (format!("attn.{n}"), w))
            .collect();
        v.extend(
            self.ffn
                .weights()
                .tensors()
                .into_iter()
                .map(|(n, w)| (format!("ffn.{n}"), w)),
        );
        v
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v: Vec<&mut Linear> = self.attention.tensors_mut().into_iter().map(|(_, w)| w).collect();
        v.extend(self.ffn.weights_mut().tensors_mut().into_iter().map(|(_, w)| w));
        v
    }

    pub fn quantize(&mut self, bits: BitWidth) -> Result<()> {
        for w in self.linears_mut() {
            *w = w.quantized(bits)?;
        }
        Ok(())
    }

    pub fn weight_bytes(&self) -> usize {
        self.linears().iter().map(|(_, w)| w.resident_bytes()).sum()
    }

    pub fn norm_bytes(&self) -> usize {
        4 * (self.attn_norm.len() + self.ffn_norm.len())
    }

    /// Named tensors as stored on disk (projections dequantized to `f32`).
    pub fn export_tensors(&self, index: usize) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let p = super::layer_prefix(index);
        let mut lin: BTreeMap<String, &Linear> = self.linears().into_iter().collect();
        layer_manifest_order(&p, &mut lin, &self.attn_norm, &self.ffn_norm)
    }

    fn attention_prefill(&self, x: &Matrix, positions: &[usize], ops: &mut LayerOps) -> Result<(Matrix, KvCache)> {
        match &self.attention {
            AttentionLayer::Mla(l) => l.prefill(x, positions, ops).map(|(o, c)| (o, KvCache::Mla(c))),
            AttentionLayer::Gqa(l) => l.prefill(x, positions, ops).map(|(o, c)| (o, KvCache::Gqa(c))),
        }
    }

    fn prefill(
        &self,
        index: usize,
        h: &mut Matrix,
        positions: &[usize],
        hook: &mut dyn ActivationHook,
        ops: &mut LayerOps,
    ) -> Result<KvCache> {
        let mut x = Matrix::zeros(h.rows(), h.cols());
        for t in 0..h.rows() {
            x.row_mut(t).copy_from_slice(&rms_norm(h.row(t), &self.attn_norm));
        }
        let (a, cache) = self.attention_prefill(&x, positions, ops)?;
        add_into(h.data_mut(), a.data());
        for t in 0..h.rows() {
            let y = rms_norm(h.row(t), &self.ffn_norm);
            let f = self.ffn.forward_row(&y, index, hook, ops);
            add_into(h.row_mut(t), &f);
        }
        Ok(cache)
    }

    fn decode(
        &self,
        index: usize,
        h: &mut [f32],
        cache: &mut KvCache,
        position: usize,
        hook: &mut dyn ActivationHook,
        ops: &mut LayerOps,
    ) -> Result<()> {
        let x = rms_norm(h, &self.attn_norm);
        let a = match (&self.attention, cache) {
            (AttentionLayer::Mla(l), KvCache::Mla(c)) => l.decode_step(&x, c, position, ops)?,
            (AttentionLayer::Gqa(l), KvCache::Gqa(c)) => l.decode_step(&x, c, position, ops)?,
            _ => return Err(Error::Shape("cache kind does not match attention kind".into())),
        };
        add_into(h, &a);
        let y = rms_norm(h, &self.ffn_norm);
        let f = self.ffn.forward_row(&y, index, hook, ops);
        add_into(h, &f);
        Ok(())
    }
}

fn layer_manifest_order(
    prefix: &str,
    lin: &mut BTreeMap<String, &Linear>,
    attn_norm: &[f32],
    ffn_norm: &[f32],
) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = vec![(format!("{prefix}attn_norm"), vec![attn_norm.len()], attn_norm.to_vec())];
    let mut push = |out: &mut Vec<_>, key: &str| {
        if let Some(w) = lin.remove(key) {
            let m = w.to_dense();
            out.push((format!("{prefix}{key}"), vec![m.rows(), m.cols()], m.into_vec()));
        }
    };
    for key in [
        "attn.kv_down",
        "attn.k_up",
        "attn.v_up",
        "attn.k_rope",
        "attn.q",
        "attn.q_down",
        "attn.q_up",
        "attn.q_rope",
        "attn.k",
        "attn.v",
        "attn.out",
    ] {
        push(&mut out, key);
    }
    out.push((format!("{prefix}ffn_norm"), vec![ffn_norm.len()], ffn_norm.to_vec()));
    for key in ["ffn.up", "ffn.gate", "ffn.down"] {
        push(&mut out, key);
    }
    out
}

/// Supplies layers that are not resident in the model, e.g. by reading them
/// from storage right before use.
pub trait LayerSource {
    fn fetch(&mut self, index: usize) -> Result<Layer>;
}

/// Source for fully resident models; any fetch is an error.
#[derive(Debug, Default, Clone, Copy)]
pub struct Resident;

impl LayerSource for Resident {
    fn fetch(&mut self, index: usize) -> Result<Layer> {
        Err(Error::LayerNotResident(index))
    }
}

/// Per-layer caches and the next position to decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    pub caches: Vec<KvCache>,
    next_position: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.next_position
    }

    pub fn is_empty(&self) -> bool {
        self.next_position == 0
    }

    pub fn cache_bytes(&self, bits: BitWidth) -> u64 {
        KvCache::total_bytes(&self.caches, bits)
    }
}

#[derive(Debug, Clone)]
pub struct PrefillOutput {
    /// One row of logits per input token.
    pub logits: Matrix,
    pub state: DecodeState,
    pub ops: OpCounter,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f32>,
    pub ops: OpCounter,
}

/// Phase boundaries reported by `Model::generate_with`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenPhase {
    PrefillDone,
    DecodeDone,
}

#[derive(Debug, Clone)]
pub struct Generation {
    /// Prompt followed by the generated tokens.
    pub tokens: Vec<u32>,
    pub prefill_ops: OpCounter,
    /// Summed over all decode steps.
    pub decode_ops: OpCounter,
    /// MACs of each decode step, in order.
    pub step_macs: Vec<u64>,
    pub state: DecodeState,
}

/// Decoder-only transformer with optional tied embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    embedding: Linear,
    output: Option<Linear>,
    final_norm: Vec<f32>,
    layers: Vec<Option<Layer>>,
}

impl Model {
    /// Random model: projections and tables from `N(0, INIT_STD²)`, norm gains
    /// one. Tensors are drawn in manifest order from one seeded stream.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let mut tensors: BTreeMap<String, Vec<f32>> = BTreeMap::new();
        for (name, shape) in weight_manifest(cfg) {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 1 {
                vec![1.0; n]
            } else {
                rng.normal_vec(n, 0.0, INIT_STD)
            };
            tensors.insert(name, data);
        }
        Self::from_tensors(cfg, &mut |name, _| {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))
        })
    }

    pub fn from_tensors(cfg: &ModelConfig, get: &mut TensorGetter<'_>) -> Result<Self> {
        Self::from_tensors_partial(cfg, get, &|_| true)
    }

    /// Like `from_tensors`, but only layers with `resident(i)` are loaded; the
    /// others must be supplied by a `LayerSource` at run time.
    pub fn from_tensors_partial(
        cfg: &ModelConfig,
        get: &mut TensorGetter<'_>,
        resident: &dyn Fn(usize) -> bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let table = |get: &mut TensorGetter<'_>, name: &str| -> Result<Linear> {
            let data = get(name, &[cfg.vocab_size, cfg.d_model])?;
            Ok(Linear::Dense(Matrix::from_vec(cfg.vocab_size, cfg.d_model, data)?))
        };
        let embedding = table(get, "embed")?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            layers.push(if resident(i) {
                Some(Layer::from_tensors(cfg, i, get)?)
            } else {
                None
            });
        }
        let final_norm = get("final_norm", &[cfg.d_model])?;
        let output = if cfg.tie_embeddings {
            None
        } else {
            Some(table(get, "output")?)
        };
        Ok(Self {
            config: cfg.clone(),
            embedding,
            output,
            final_norm,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Linear {
        &self.embedding
    }

    pub fn embedding_mut(&mut self) -> &mut Linear {
        &mut self.embedding
    }

    /// The logits projection; the embedding table itself when tied.
    pub fn output_head(&self) -> &Linear {
        self.output.as_ref().unwrap_or(&self.embedding)
    }

    pub fn final_norm(&self) -> &[f32] {
        &self.final_norm
    }

    pub fn layer(&self, i: usize) -> Option<&Layer> {
        self.layers.get(i).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut Layer> {
        self.layers.get_mut(i).and_then(Option::as_mut)
    }

    /// Drops layer `i` from memory, returning it.
    pub fn evict_layer(&mut self, i: usize) -> Option<Layer> {
        self.layers.get_mut(i).and_then(Option::take)
    }

    pub fn is_resident(&self, i: usize) -> bool {
        self.layer(i).is_some()
    }

    /// Quantizes every projection and the embedding/output tables.
    pub fn quantize(&mut self, bits: BitWidth) -> Result<()> {
        self.embedding = self.embedding.quantized(bits)?;
        if let Some(o) = &mut self.output {
            *o = o.quantized(bits)?;
        }
        for layer in self.layers.iter_mut().flatten() {
            layer.quantize(bits)?;
        }
        Ok(())
    }

    /// Bytes held by resident weight matrices (tables and projections).
    pub fn weight_bytes(&self) -> usize {
        self.embedding.resident_bytes()
            + self.output.as_ref().map_or(0, Linear::resident_bytes)
            + self.layers.iter().flatten().map(Layer::weight_bytes).sum::<usize>()
    }

    /// Bytes held by resident `f32` norm gains.
    pub fn norm_bytes(&self) -> usize {
        4 * self.final_norm.len() + self.layers.iter().flatten().map(Layer::norm_bytes).sum::<usize>()
    }

    /// Number of allocated weight entries, counted from live storage.
    pub fn allocated_params(&self) -> u64 {
        let lin = |w: &Linear| w.numel() as u64;
        lin(&self.embedding)
            + self.output.as_ref().map_or(0, lin)
            + self.final_norm.len() as u64
            + self
                .layers
                .iter()
                .flatten()
                .map(|l| {
                    l.linears().iter().map(|(_, w)| lin(w)).sum::<u64>() + (l.attn_norm.len() + l.ffn_norm.len()) as u64
                })
                .sum::<u64>()
    }

    /// Every resident tensor in manifest order, projections as `f32`.
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let cfg = &self.config;
        let table = |w: &Linear| w.to_dense().into_vec();
        let mut out = vec![(
            String::from("embed"),
            vec![cfg.vocab_size, cfg.d_model],
            table(&self.embedding),
        )];
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(l) = layer {
                out.extend(l.export_tensors(i));
            }
        }
        out.push((String::from("final_norm"), vec![cfg.d_model], self.final_norm.clone()));
        if let Some(o) = &self.output {
            out.push((String::from("output"), vec![cfg.vocab_size, cfg.d_model], table(o)));
        }
        out
    }

    pub fn new_state(&self) -> DecodeState {
        DecodeState {
            caches: Vec::new(),
            next_position: 0,
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        let vocab = self.config.vocab_size;
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::UnknownToken { token, vocab });
        }
        Ok(())
    }

    fn embed(&self, token: u32) -> Vec<f32> {
        self.embedding.row(token as usize)
    }

    fn logits(&self, h: &[f32], ops: &mut OpCounter) -> Vec<f32> {
        let x = rms_norm(h, &self.final_norm);
        let head = self.output_head();
        ops.lm_head += head.numel() as u64;
        head.apply_vec(&x)
    }

    fn with_layer<R>(
        &self,
        index: usize,
        source: &mut dyn LayerSource,
        f: impl FnOnce(&Layer) -> Result<R>,
    ) -> Result<R> {
        match &self.layers[index] {
            Some(layer) => f(layer),
            None => {
                let layer = source.fetch(index)?;
                f(&layer)
            }
        }
    }

    pub fn prefill(&self, tokens: &[u32]) -> Result<PrefillOutput> {
        self.prefill_with(tokens, &mut Resident, &mut NoHook)
    }

    /// Causal forward over `tokens` at positions `0..N`, returning logits for
    /// every position and the filled caches.
    pub fn prefill_with(
        &self,
        tokens: &[u32],
        source: &mut dyn LayerSource,
        hook: &mut dyn ActivationHook,
    ) -> Result<PrefillOutput> {
        if tokens.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let mut ops = OpCounter::new(self.config.n_layers);
        let mut h = Matrix::zeros(tokens.len(), d);
        for (t, &tok) in tokens.iter().enumerate() {
            h.row_mut(t).copy_from_slice(&self.embed(tok));
        }
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let mut caches = Vec::with_capacity(self.config.n_layers);
        for i in 0..self.config.n_layers {
            let layer_ops = &mut ops.layers[i];
            let cache = self.with_layer(i, source, |l| l.prefill(i, &mut h, &positions, hook, layer_ops))?;
            caches.push(cache);
        }
        let mut logits = Matrix::zeros(tokens.len(), self.config.vocab_size);
        for t in 0..tokens.len() {
            let row = self.logits(h.row(t), &mut ops);
            logits.row_mut(t).copy_from_slice(&row);
        }
        Ok(PrefillOutput {
            logits,
            state: DecodeState {
                caches,
                next_position: tokens.len(),
            },
            ops,
        })
    }

    pub fn decode_step(&self, state: &mut DecodeState, token: u32) -> Result<StepOutput> {
        self.decode_step_with(state, token, &mut Resident, &mut NoHook)
    }

    /// Processes `token` at the next position, appending to every cache.
    pub fn decode_step_with(
        &self,
        state: &mut DecodeState,
        token: u32,
        source: &mut dyn LayerSource,
        hook: &mut dyn ActivationHook,
    ) -> Result<StepOutput> {
        self.check_tokens(&[token])?;
        let position = state.next_position;
        if position >= self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: position + 1,
                max: self.config.max_seq_len,
            });
        }
        if state.caches.is_empty() {
            for i in 0..self.config.n_layers {
                let cache = self.with_layer(i, source, |l| Ok(l.attention.new_cache()))?;
                state.caches.push(cache);
            }
        }
        let mut ops = OpCounter::new(self.config.n_layers);
        let mut h = self.embed(token);
        for i in 0..self.config.n_layers {
            let cache = &mut state.caches[i];
            let layer_ops = &mut ops.layers[i];
            self.with_layer(i, source, |l| l.decode(i, &mut h, cache, position, hook, layer_ops))?;
        }
        let logits = self.logits(&h, &mut ops);
        state.next_position += 1;
        Ok(StepOutput { logits, ops })
    }

    pub fn generate(&self, prompt: &[u32], n_new: usize) -> Result<Generation> {
        self.generate_with(prompt, n_new, &mut Resident, &mut |_| {})
    }

    /// Greedy generation. The first new token comes from the prefill logits;
    /// each generated token is then fed through one decode step, so the final
    /// state holds `prompt.len() + n_new` tokens. `mark` is called when each
    /// phase finishes.
    pub fn generate_with(
        &self,
        prompt: &[u32],
        n_new: usize,
        source: &mut dyn LayerSource,
        mark: &mut dyn FnMut(GenPhase),
    ) -> Result<Generation> {
        if prompt.is_empty() {
            return Err(Error::Empty("prompt"));
        }
        let total = prompt.len() + n_new;
        if total > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: total,
                max: self.config.max_seq_len,
            });
        }
        let pre = self.prefill_with(prompt, source, &mut NoHook)?;
        let mut tokens = prompt.to_vec();
        let mut state = pre.state;
        let mut next = argmax(pre.logits.row(prompt.len() - 1));
        mark(GenPhase::PrefillDone);
        let mut decode_ops = OpCounter::new(self.config.n_layers);
        let mut step_macs = Vec::with_capacity(n_new);
        for _ in 0..n_new {
            tokens.push(next);
            let step = self.decode_step_with(&mut state, next, source, &mut NoHook)?;
            step_macs.push(step.ops.macs());
            decode_ops.merge(&step.ops);
            next = argmax(&step.logits);
        }
        mark(GenPhase::DecodeDone);
        Ok(Generation {
            tokens,
            prefill_ops: pre.ops,
            decode_ops,
            step_macs,
            state,
        })
    }

    pub fn perplexity(&self, stream: &[u32]) -> Result<f64> {
        self.perplexity_with(stream, &mut Resident, &mut NoHook)
    }

    /// `exp(mean next-token NLL)` over `stream`, evaluated in independent
    /// windows of at most `max_seq_len` tokens.
    pub fn perplexity_with(
        &self,
        stream: &[u32],
        source: &mut dyn LayerSource,
        hook: &mut dyn ActivationHook,
    ) -> Result<f64> {
        if stream.len() < 2 {
            return Err(Error::Empty("perplexity needs at least two tokens"));
        }
        let mut nll = 0.0;
        let mut count = 0usize;
        for window in stream.chunks(self.config.max_seq_len) {
            if window.len() < 2 {
                continue;
            }
            let out = self.prefill_with(&window[..window.len() - 1], source, hook)?;
            nll += nll_from_logits(&out.logits, &window[1..])?;
            count += window.len() - 1;
        }
        Ok(libm::exp(nll / count as f64))
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f32]) -> u32 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Summed negative log-likelihood (natural log) of `targets[t]` under the
/// softmax of `logits` row `t`.
pub fn nll_from_logits(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let row = logits.row(t);
        if target as usize >= row.len() {
            return Err(Error::UnknownToken {
                token: target,
                vocab: row.len(),
            });
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(f64::from(*v)));
        let lse = max + libm::log(row.iter().map(|v| libm::exp(f64::from(*v) - max)).sum::<f64>());
        total += lse - f64::from(row[target as usize]);
    }
    Ok(total)
}

/// `exp(mean NLL)` of `targets` under `logits`.
pub fn perplexity_from_logits(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("perplexity targets"));
    }
    Ok(libm::exp(nll_from_logits(logits, targets)? / targets.len() as f64))
}

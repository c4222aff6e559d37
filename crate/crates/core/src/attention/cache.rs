use alloc::vec::Vec;

use crate::tensor::BitWidth;

/// Per-layer MLA cache: the joint latent `c^KV` and the shared rotary key
/// `k^R` of every processed token.
#[derive(Debug, Clone, PartialEq)]
pub struct MlaKvCache {
    kv_rank: usize,
    d_rope: usize,
    latents: Vec<f32>,
    rope_keys: Vec<f32>,
    last_position: Option<usize>,
}

impl MlaKvCache {
    pub fn new(kv_rank: usize, d_rope: usize) -> Self {
        Self {
            kv_rank,
            d_rope,
            latents: Vec::new(),
            rope_keys: Vec::new(),
            last_position: None,
        }
    }

    pub fn len(&self) -> usize {
        self.latents.len() / self.kv_rank
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn last_position(&self) -> Option<usize> {
        self.last_position
    }

    pub fn latent(&self, t: usize) -> &[f32] {
        &self.latents[t * self.kv_rank..(t + 1) * self.kv_rank]
    }

    pub fn rope_key(&self, t: usize) -> &[f32] {
        &self.rope_keys[t * self.d_rope..(t + 1) * self.d_rope]
    }

    pub(crate) fn rope_keys(&self) -> &[f32] {
        &self.rope_keys
    }

    pub(crate) fn push(&mut self, latent: &[f32], rope_key: &[f32], position: usize) {
        debug_assert_eq!(latent.len(), self.kv_rank);
        debug_assert_eq!(rope_key.len(), self.d_rope);
        self.latents.extend_from_slice(latent);
        self.rope_keys.extend_from_slice(rope_key);
        self.last_position = Some(position);
    }

    /// Stored values per token, `d_c + d_rope`.
    pub fn values_per_token(&self) -> usize {
        self.kv_rank + self.d_rope
    }

    pub fn bytes(&self, bits: BitWidth) -> u64 {
        bits.bytes_for((self.values_per_token() * self.len()) as u64)
    }
}

/// Per-layer GQA cache: rotated keys and values of every KV head.
#[derive(Debug, Clone, PartialEq)]
pub struct GqaKvCache {
    n_kv_heads: usize,
    d_head: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    last_position: Option<usize>,
}

impl GqaKvCache {
    pub fn new(n_kv_heads: usize, d_head: usize) -> Self {
        Self {
            n_kv_heads,
            d_head,
            keys: Vec::new(),
            values: Vec::new(),
            last_position: None,
        }
    }

    fn width(&self) -> usize {
        self.n_kv_heads * self.d_head
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn last_position(&self) -> Option<usize> {
        self.last_position
    }

    pub(crate) fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub(crate) fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn push(&mut self, key: &[f32], value: &[f32], position: usize) {
        debug_assert_eq!(key.len(), self.width());
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.last_position = Some(position);
    }

    /// Stored values per token, `2 · n_kv_heads · d_head`.
    pub fn values_per_token(&self) -> usize {
        2 * self.width()
    }

    pub fn bytes(&self, bits: BitWidth) -> u64 {
        bits.bytes_for((self.values_per_token() * self.len()) as u64)
    }
}

/// One layer's cache of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum KvCache {
    Mla(MlaKvCache),
    Gqa(GqaKvCache),
}

impl KvCache {
    pub fn len(&self) -> usize {
        match self {
            KvCache::Mla(c) => c.len(),
            KvCache::Gqa(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self, bits: BitWidth) -> u64 {
        match self {
            KvCache::Mla(c) => c.bytes(bits),
            KvCache::Gqa(c) => c.bytes(bits),
        }
    }

    /// Total bytes of a stack of per-layer caches.
    pub fn total_bytes(caches: &[KvCache], bits: BitWidth) -> u64 {
        caches.iter().map(|c| c.bytes(bits)).sum()
    }
}

/// `(d_rope + d_c) · bit_width/8 · tokens` per layer, times `n_layers`.
pub fn mla_cache_bytes(kv_rank: usize, d_rope: usize, bits: BitWidth, tokens: u64, n_layers: usize) -> u64 {
    n_layers as u64 * bits.bytes_for((kv_rank + d_rope) as u64 * tokens)
}

/// `2 · n_kv_heads · d_h · bit_width/8 · tokens` per layer, times `n_layers`.
pub fn gqa_cache_bytes(n_kv_heads: usize, d_head: usize, bits: BitWidth, tokens: u64, n_layers: usize) -> u64 {
    n_layers as u64 * bits.bytes_for(2 * (n_kv_heads * d_head) as u64 * tokens)
}

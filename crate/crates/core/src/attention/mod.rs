//! Attention layers and their KV caches.
//!
//! Both layer kinds evaluate prefill with a dense `N × N` score and value
//! kernel and apply the causal mask after scoring, so every score entry is a
//! counted multiply-accumulate. A decode step attends over all cached tokens
//! plus itself.

mod cache;
mod config;
mod gqa;
mod mha;
mod mla;

pub use cache::{gqa_cache_bytes, mla_cache_bytes, GqaKvCache, KvCache, MlaKvCache};
pub use config::{GqaLayerConfig, MlaLayerConfig};
pub use gqa::{gqa_decode_step, gqa_prefill, GqaLayer, GqaWeights};
pub use mha::{mha_reference, MhaWeights};
pub use mla::{mla_decode_step, mla_prefill, MlaLayer, MlaQuery, MlaWeights};

use alloc::vec::Vec;

use crate::tensor::softmax_in_place;

/// Scores `row` with the causal mask for query position index `t` (entries
/// past `t` become `-inf`) and normalizes it in place.
pub(crate) fn masked_softmax(row: &mut [f64], t: usize) {
    for s in row.iter_mut().skip(t + 1) {
        *s = f64::NEG_INFINITY;
    }
    let ok = softmax_in_place(row);
    debug_assert!(ok, "query always sees itself");
}

/// `Σ_j p_j v_j` over rows of `values` (row stride `stride`, slice at
/// `offset..offset+width`), accumulated in `f64`.
pub(crate) fn weighted_sum(probs: &[f64], values: &[f32], stride: usize, offset: usize, width: usize, out: &mut [f32]) {
    let mut acc: Vec<f64> = alloc::vec![0.0; width];
    for (j, p) in probs.iter().enumerate() {
        let v = &values[j * stride + offset..j * stride + offset + width];
        for (a, x) in acc.iter_mut().zip(v) {
            *a += p * f64::from(*x);
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

//! Allocation-only core for studying small edge-oriented decoder models.
//!
//! The crate covers:
//!
//! - [`tensor`]: dense row-major matrices, softmax, rotary embeddings,
//!   per-row weight quantization and a portable RNG.
//! - [`attention`]: multi-head latent attention (MLA), grouped-query attention
//!   (GQA/MQA/MHA) and their KV caches with exact byte accounting.
//! - [`ffn`]: squared-ReLU and SwiGLU feed-forward blocks and the activation
//!   sparsity procedure.
//! - [`model`]: the decoder stack, presets, parameter counting and the
//!   instrumented MAC counter.
//! - [`cost`]: closed-form MAC, cache and latency models checked against the
//!   instrumented counter.
//! - [`train`]: learning-rate schedules and preference losses.
//!
//! Nothing here touches the file system or a clock; see the `plm-lab` crate
//! for IO, timing and the command line.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod cost;
mod error;
pub mod ffn;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

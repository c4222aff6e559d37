//! Dense linear algebra, softmax, rotary embeddings, quantization and RNG.
//!
//! Working precision is `f32`; every reduction (dot products, softmax sums,
//! norms) accumulates in `f64` in a fixed sequential order so results are
//! bit-reproducible across runs and platforms.

mod linear;
mod matrix;
mod quant;
mod rng;
mod rope;

pub use linear::Linear;
pub use matrix::{dot, matmul, softmax_in_place, softmax_rows, Matrix};
pub use quant::{dequantize, quantize, BitWidth, QuantizedMatrix};
pub use rng::Rng;
pub use rope::{apply_rope, RopeTable, DEFAULT_THETA_BASE};

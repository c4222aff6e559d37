//! Decoder-only model assembly, presets, parameter counting and MAC
//! instrumentation.

mod config;
mod counter;
mod params;
pub mod presets;
mod runtime;

pub use config::{AttentionKind, ModelConfig};
pub use counter::{LayerOps, OpCounter};
pub use params::{
    attention_params, count_params, ffn_params, layer_manifest, layer_prefix, weight_manifest, ParamCount,
};
pub use runtime::{
    nll_from_logits, perplexity_from_logits, rms_norm, AttentionLayer, DecodeState, GenPhase, Generation, Layer,
    LayerSource, Model, PrefillOutput, Resident, StepOutput, INIT_STD, RMS_EPS,
};

use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("fully masked row {0}")]
    FullyMaskedRow(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported bit width {0}, expected 4, 8 or 16")]
    BitWidth(u32),
    #[error("quantization scale overflows f16 in row {0}")]
    ScaleOverflow(usize),
    #[error("position {position} does not follow last cached position {last}")]
    Ordering { position: usize, last: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {token} outside vocabulary of {vocab}")]
    UnknownToken { token: u32, vocab: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("layer {0} is not resident and no layer source was supplied")]
    LayerNotResident(usize),
    #[error("layer source failed: {0}")]
    LayerSource(String),
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("missing refinement log-probabilities in example {0}")]
    MissingRefinement(usize),
    #[error("configs are not comparable: {0}")]
    Incomparable(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty logits")]
    EmptyLogits,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite loss at task {0}")]
    NonFiniteLoss(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("unknown image id {0}")]
    UnknownId(u64),
    #[error("unknown label {0}")]
    UnknownLabel(u16),
    #[error("insufficient eligible records: need {needed}, have {available} (short by {})", needed - available)]
    Insufficient { needed: usize, available: usize },
    #[error("k = {k} is out of range for a pool of {n}")]
    InvalidK { k: usize, n: usize },
    #[error("zero-norm embedding at position {0}")]
    ZeroNorm(usize),
    #[error("mask geometry mismatch: {0}x{1} vs {2}x{3}")]
    Geometry(usize, usize, usize, usize),
    #[error("empty prompt list")]
    EmptyPrompts,
    #[error("empty pool")]
    EmptyPool,
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence of {needed} tokens exceeds retriever capacity {capacity}")]
    Capacity { needed: usize, capacity: usize },
    #[error("combinatorial cap exceeded: C({n},{k}) = {count} > {cap}; use a smaller pool or k")]
    CapExceeded { n: usize, k: usize, count: u128, cap: u128 },
    #[error("scorer failed on query {index}: {message}")]
    Scorer { index: usize, message: String },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

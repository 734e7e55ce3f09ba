use thiserror::Error;

/// Errors raised by the codec, channel, decoders and simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GqsmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rank {rank} out of range for C({n}, {p}) = {count}")]
    RankOutOfRange {
        rank: u64,
        n: usize,
        p: usize,
        count: u64,
    },

    #[error("index set must be strictly increasing and below {n}: {indices:?}")]
    InvalidIndexSet { indices: Vec<usize>, n: usize },

    #[error("expected {expected} spatial bits, got {actual}")]
    BitLengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("damping factor {0} outside [0, 1]")]
    InvalidDamping(f64),

    #[error("non-positive frame energy {0}")]
    NonPositiveEnergy(f64),

    #[error("ML search space of {size} hypotheses exceeds cap {cap}")]
    SearchSpaceTooLarge { size: u64, cap: u64 },
}

pub type Result<T> = std::result::Result<T, GqsmError>;

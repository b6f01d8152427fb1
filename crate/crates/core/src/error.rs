use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative entry in {0}")]
    Negative(&'static str),

    #[error("{what} is not normalized: row {row} sums to {sum}")]
    NotNormalized {
        what: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("zero normalizer for row {0}")]
    ZeroNormalizer(usize),

    #[error("invalid hypergraph: {0}")]
    InvalidGraph(String),

    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange {
        token: usize,
        position: usize,
        vocab: usize,
    },

    #[error("sequence too short: need at least {min} positions, got {got}")]
    SequenceTooShort { min: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dense materialization of {entries} entries exceeds the limit of {limit}")]
    SizeGuard { entries: u128, limit: u128 },

    #[error("the max-product semiring does not distribute over the low-rank factorization; materialize the scoring matrix densely first")]
    LowRankUnderMax,

    #[error("SVD failed to converge")]
    SvdFailed,
}

use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("probabilities sum to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("KL divergence is infinite: p[{index}] > 0 but q[{index}] = 0")]
    InfiniteDivergence { index: usize },

    #[error("enumeration guard exceeded: {sequences} sequences > {max}")]
    EnumerationGuard { sequences: u128, max: usize },

    #[error("prefix of length {len} out of range for model of length {max}")]
    PrefixOutOfRange { len: usize, max: usize },

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },

    #[error("invalid parameter: {what}")]
    InvalidParameter { what: String },

    #[error("tilt normalizer is zero or non-finite")]
    DegenerateNormalizer,

    #[error("infinite loss: zero probability on a supported outcome (index {index})")]
    InfiniteLoss { index: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

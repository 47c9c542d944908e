//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is not positive definite beyond jitter (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("singular system in {context} (condition estimate {cond_estimate:.3e})")]
    Singular {
        context: String,
        cond_estimate: f64,
    },

    #[error("unknown power delay profile `{0}`")]
    UnknownProfile(String),

    #[error(
        "temporal correlation factorization failed (fd = {fd_hz} Hz, T = {block_duration} s): {detail}"
    )]
    TemporalFactorization {
        fd_hz: f64,
        block_duration: f64,
        detail: String,
    },

    #[error(
        "filter update diverging at block {block}: error norm grew {ratio:.2}x over {span} recursions (step size too large?)"
    )]
    Divergence { block: usize, ratio: f64, span: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("verification failure: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code class used by the CLI: 2 config, 3 numerical, 4 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::UnknownProfile(_) => 2,
            Error::Verification(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

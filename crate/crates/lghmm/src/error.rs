//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, training, filtering and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A model violates one of its construction invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The steady-state fixed-point iteration did not converge.
    #[error(
        "steady-state iteration did not converge within {max_iter} iterations \
         (spectral radius estimate {spectral_radius:.6})"
    )]
    SteadyStateDiverged { max_iter: usize, spectral_radius: f64 },

    /// Bad or inconsistent configuration input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Quantizer misuse (bad cardinality, NaN input, index out of range).
    #[error("quantizer error: {0}")]
    Quantizer(String),

    /// A trainer finished without a single usable sample.
    #[error("training produced no usable samples: {0}")]
    NoSamples(String),

    /// Text-format parse failure (model files, grid files, trajectory CSV).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

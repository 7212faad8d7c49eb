//! Loudspeaker fingerprinting from an inaudible multi-tone stimulus.
//!
//! The pipeline: synthesize a 14-21 kHz tone comb (`stimulus`), estimate the
//! speaker's per-tone response from a recording (`features`), match the
//! normalized response vector against enrolled profiles (`registry`). The
//! `simbench` module simulates a fleet of speakers plus environment noise so
//! the whole chain can be exercised at desk scale, and `stats` carries the
//! lognormal error model (false-positive/false-negative rates, threshold
//! choice, entropy, SNR requirement).

pub mod features;
pub mod registry;
pub mod simbench;
pub mod stats;
pub mod stimulus;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid stimulus spec: {0}")]
    InvalidSpec(String),
    #[error("audio format: {0}")]
    AudioFormat(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Deterministic sub-seed derivation: splitmix64 scramble of seed and stream
/// index. Keeps independent RNG streams reproducible from one master seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Error type shared by all engine modules.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must compose or match do not.
    #[error("{0}")]
    ShapeMismatch(String),

    /// A cut index outside the interior range 1 < k < L.
    #[error("cut index out of interior range (k={k}, layers={layers})")]
    CutOutOfRange { k: usize, layers: usize },

    /// A label value that is not a valid class index.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },

    /// Blend factor outside [0, 1].
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    /// An aggregation was asked to average zero participants.
    #[error("aggregation over empty participant list")]
    EmptyParticipants,

    /// Weight vector invalid for aggregation (negative entry or zero sum).
    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),

    /// Serialized weight stream ended before all declared data was read.
    #[error("unexpected end of weights")]
    UnexpectedEndOfWeights,

    /// Serialized weight stream is structurally invalid.
    #[error("weight format error: {0}")]
    WeightFormat(String),

    /// A training shard contained no samples.
    #[error("shard for vu {0} is empty")]
    EmptyShard(u32),

    /// Invalid round or protocol configuration, reported before training.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// FSTL was started without a pre-trained weight source.
    #[error("protocol requires a pre-trained weight source")]
    MissingPretrained,

    /// A latency parameter violates its domain.
    #[error("invalid latency parameter: {0}")]
    InvalidLatencyParam(String),

    /// Measured-mode latency extraction is missing symbol values.
    #[error("missing measurements for latency symbols: {0}")]
    MissingMeasurement(String),
}

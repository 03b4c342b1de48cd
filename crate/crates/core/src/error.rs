// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.
//!
//! Each variant maps to a stable kebab-case code (see [`Error::code`]) so
//! that callers outside Rust (trainers, bindings, shell scripts) can match on
//! the failure kind without parsing the message.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bad magic: expected ATTD, found {found:02x?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported dump version {0}")]
    VersionUnsupported(u16),

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    TruncatedPayload { needed: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("inconsistent lengths: {0}")]
    InconsistentLengths(String),

    #[error("empty response range")]
    EmptyResponseRange,

    #[error("quantile {0} out of range")]
    QuantileOutOfRange(f64),

    #[error("empty head group")]
    EmptyGroup,

    #[error("head ({layer},{head}) not present in stack")]
    MissingHead { layer: u16, head: u16 },

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("negative probability {value} at row {row}, column {col}")]
    NegativeProbability { row: usize, col: usize, value: f64 },

    #[error("series too short: need at least {needed}, got {len}")]
    SeriesTooShort { needed: usize, len: usize },

    #[error("unknown peak method `{0}`")]
    UnknownMethod(String),

    #[error("empty peak set")]
    EmptyPeakSet,

    #[error("empty first set")]
    EmptySetA,

    #[error("invalid lag: {0}")]
    InvalidLag(String),

    #[error("jaccard undefined for two empty sets")]
    BothEmpty,

    #[error("unmatched buckets: {0}")]
    UnmatchedBuckets(String),

    #[error("group too small: need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),

    #[error("misaligned series: {0}")]
    MisalignedSeries(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing panel data: {0}")]
    MissingPanelData(String),

    #[error("stack failed validation: {0}")]
    InvalidStack(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code for this error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BadMagic { .. } => "bad-magic",
            Error::VersionUnsupported(_) => "version-unsupported",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::SchemaViolation(_) => "schema-violation",
            Error::InconsistentLengths(_) => "inconsistent-lengths",
            Error::EmptyResponseRange => "empty-response-range",
            Error::QuantileOutOfRange(_) => "quantile-out-of-range",
            Error::EmptyGroup => "empty-group",
            Error::MissingHead { .. } => "missing-head",
            Error::DegenerateDistribution(_) => "degenerate-distribution",
            Error::NegativeProbability { .. } => "negative-probability",
            Error::SeriesTooShort { .. } => "series-too-short",
            Error::UnknownMethod(_) => "unknown-method",
            Error::EmptyPeakSet => "empty-peak-set",
            Error::EmptySetA => "empty-set-a",
            Error::InvalidLag(_) => "invalid-lag",
            Error::BothEmpty => "both-empty",
            Error::UnmatchedBuckets(_) => "unmatched-buckets",
            Error::GroupTooSmall(_) => "group-too-small",
            Error::MisalignedSeries(_) => "misaligned-series",
            Error::LengthMismatch(_) => "length-mismatch",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::InvalidConfig(_) => "invalid-config",
            Error::MissingPanelData(_) => "missing-panel-data",
            Error::InvalidStack(_) => "invalid-stack",
            Error::Io { .. } => "io",
            Error::Json(_) => "schema-violation",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

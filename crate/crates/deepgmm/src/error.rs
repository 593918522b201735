//! Crate-wide error type.
//!
//! Every failure carries a stable machine-readable code (see [`Error::code`])
//! so the CLI can print `ERROR:<code>: <message>` lines.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("channel {channel} is constant over the ROI; cannot normalize")]
    ZeroVariance { channel: usize },

    #[error("component {class} received total responsibility below 1e-12")]
    EmptyComponent { class: usize },

    #[error("domain has {pixels} ROI pixels but {classes} classes were requested")]
    TooFewPixels { pixels: usize, classes: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("backward called without a matching forward pass")]
    StaleActivations,

    #[error("image {image} has no pixels of class {class}")]
    MissingClass { image: usize, class: usize },

    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },

    #[error("image {image} has {actual} channels, expected {expected}")]
    HeterogeneousChannels {
        image: usize,
        expected: usize,
        actual: usize,
    },

    #[error("pixel domains do not match")]
    DomainMismatch,

    #[error("{classes} classes exceed the exhaustive permutation limit of {max}")]
    TooManyClasses { classes: usize, max: usize },

    #[error("bad magic bytes; not a tensor container file")]
    BadMagic,

    #[error("unsupported container version {0}")]
    BadVersion(u32),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable token used in CLI `ERROR:<code>:` prefixes.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroVariance { .. } => "ZeroVariance",
            Error::EmptyComponent { .. } => "EmptyComponent",
            Error::TooFewPixels { .. } => "TooFewPixels",
            Error::Shape(_) => "ShapeError",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::StaleActivations => "StaleActivations",
            Error::MissingClass { .. } => "MissingClass",
            Error::NonFinite { .. } => "NonFinite",
            Error::HeterogeneousChannels { .. } => "HeterogeneousChannels",
            Error::DomainMismatch => "DomainMismatch",
            Error::TooManyClasses { .. } => "TooManyClasses",
            Error::BadMagic => "BadMagic",
            Error::BadVersion(_) => "BadVersion",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::SpecInvalid(_) => "SpecInvalid",
            Error::Invalid(_) => "InvalidInput",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

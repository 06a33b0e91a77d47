use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: malformed header, expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("observations mix plot ids `{first}` and `{other}`")]
    MixedPlots { first: String, other: String },

    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),

    #[error("month index {0} outside 0..12")]
    Month(usize),

    #[error("harmonic fit for band {band} is rank deficient ({points} usable months, 4 required)")]
    RankDeficient { band: String, points: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("class {class} has {count} sample(s), at least 2 are required for a split")]
    TooFewSamples { class: usize, count: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Short machine-readable tag of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Header { .. } => "header",
            Error::Row { .. } => "row",
            Error::MixedPlots { .. } => "mixed-plots",
            Error::Latitude(_) => "latitude",
            Error::Month(_) => "month",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::Shape(_) => "shape",
            Error::Empty(_) => "empty",
            Error::SingleClass(_) => "single-class",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::TooFewSamples { .. } => "too-few-samples",
            Error::LabelRange { .. } => "label-range",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Invalid(_) => "invalid",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("m={m} and n={n} are not co-prime")]
    NonCoprime { m: usize, n: usize },
    #[error("co-prime pair must satisfy 1 <= m < n (got m={m}, n={n})")]
    BadOrder { m: usize, n: usize },
    #[error("angle {0} deg is outside the visible region")]
    OutOfRangeAngle(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("snapshot matrix has no columns")]
    EmptySnapshots,
    #[error("coarray lag {0} has no contributing sensor pair")]
    MissingLag(i64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("spectrum is constant; cannot normalize")]
    DegenerateConstant,
    #[error("scale must be positive (got {0})")]
    NonPositiveScale(f64),
    #[error("KL term is negative ({0}); upstream bug")]
    NegativeKl(f64),
    #[error("cache was produced by a different model state")]
    StaleCache,
    #[error("DOA {doa} deg lies outside the grid [{min}, {max}]")]
    OffGridOutOfRange { doa: f64, min: f64, max: f64 },
    #[error("DOAs {0} and {1} deg map to the same grid bin")]
    DuplicateBin(f64, f64),
    #[error("record {index}: {message}")]
    SchemaViolation { index: usize, message: String },
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k={k} exceeds grid size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("separation {0} deg is not representable on the grid")]
    SeparationOffGrid(f64),
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
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonCoprime { .. } => "non_coprime",
            Error::BadOrder { .. } => "bad_order",
            Error::OutOfRangeAngle(_) => "out_of_range_angle",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptySnapshots => "empty_snapshots",
            Error::MissingLag(_) => "missing_lag",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::DegenerateConstant => "degenerate_constant",
            Error::NonPositiveScale(_) => "non_positive_scale",
            Error::NegativeKl(_) => "negative_kl",
            Error::StaleCache => "stale_cache",
            Error::OffGridOutOfRange { .. } => "off_grid_out_of_range",
            Error::DuplicateBin(..) => "duplicate_bin",
            Error::SchemaViolation { .. } => "schema_violation",
            Error::DivergedLoss { .. } => "diverged_loss",
            Error::EmptyDataset => "empty_dataset",
            Error::KTooLarge { .. } => "k_too_large",
            Error::SeparationOffGrid(_) => "separation_off_grid",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

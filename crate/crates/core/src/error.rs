use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {location}: {message}")]
    MalformedRecord { location: String, message: String },
    #[error("event ({x}, {y}) outside sensor geometry {width}x{height}")]
    GeometryViolation {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("target geometry {target:?} larger than source {source_geometry:?}")]
    TargetLargerThanSource {
        target: (u32, u32),
        source_geometry: (u32, u32),
    },
    #[error("events are not sorted by timestamp (first violation at index {index})")]
    Unsorted { index: usize },
    #[error("invalid window [{start}, {end})")]
    InvalidWindow { start: u64, end: u64 },
    #[error("pose track too short: {0} samples (need at least 2)")]
    TrackTooShort(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("tape mismatch: expected record for layer {expected}, found {found}")]
    TapeMismatch { expected: String, found: String },
    #[error("batch-norm layer {0} has no running statistics for inference")]
    UninitializedBatchNorm(String),
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("insufficient positives: {0}")]
    InsufficientPositives(String),
    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("non-finite gradient for parameter {0}; step rejected")]
    NonFiniteGradient(String),
    #[error("empty descriptor database")]
    EmptyDatabase,
    #[error("duplicate database entry (traverse {traverse}, place {place})")]
    DuplicateEntry { traverse: u32, place: u32 },
    #[error("{what} format version {found} not supported (expected {expected})")]
    VersionMismatch { what: &'static str, found: u32, expected: u32 },
    #[error("corrupt checkpoint blob: {0}")]
    CorruptBlob(String),
    #[error("missing statistics for layer {0}")]
    MissingLayerStats(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input data rather than bad usage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::Toml(_))
    }
}

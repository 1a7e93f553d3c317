use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stream")]
    EmptyStream,

    #[error("non-finite feature in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-monotonic step_index: {current} follows {previous}")]
    NonMonotonicStep { previous: u64, current: u64 },

    #[error("unrecognized format: {}", .0.display())]
    UnrecognizedFormat(PathBuf),

    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },

    #[error("truncated file: {}", .0.display())]
    Truncated(PathBuf),

    #[error("checksum failure: {0}")]
    Checksum(String),

    #[error("manifest/prototype mismatch: {0}")]
    ManifestMismatch(String),

    #[error("malformed manifest line {line}: {text}")]
    MalformedManifest { line: usize, text: String },

    #[error("zero total weight")]
    ZeroWeight,

    #[error("zero variance")]
    ZeroVariance,

    #[error("retained dimension {requested} exceeds rank bound {bound}")]
    RankBound { requested: usize, bound: usize },

    #[error("asymmetric matrix: max deviation {deviation:e}")]
    Asymmetric { deviation: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("test infeasible: {included} classes have enough soft mass")]
    TestInfeasible { included: usize },

    #[error("zero-norm row {row}")]
    ZeroNorm { row: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible drift spec: max per-step KL {max_step_kl:.6} exceeds budget {budget}; needs at least {minimal_domains} domains")]
    InfeasibleDrift {
        max_step_kl: f64,
        budget: f64,
        minimal_domains: usize,
    },

    #[error("missing labels for step {step}")]
    MissingLabels { step: u64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("batch {index} (step {step}): {source}")]
    Batch {
        index: usize,
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration rather than the data.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InfeasibleDrift { .. } => true,
            Error::Batch { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn in_batch(self, index: usize, step: u64) -> Error {
        Error::Batch {
            index,
            step,
            source: Box::new(self),
        }
    }
}

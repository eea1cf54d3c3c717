use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("chunk size mismatch in {path}: expected {expected} bytes, found {found}")]
    ChunkSizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("invalid downsample factor {0} (expected one of 1, 2, 4, 8, 16)")]
    InvalidFactor(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),
    #[error("unknown fragment id {0}")]
    UnknownFragment(u64),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("missing features for candidate {0}")]
    MissingFeatures(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("decision log error: {0}")]
    Log(String),
    #[error("no positive labels")]
    NoPositives,
    #[error("assessment for unscored candidate {0}")]
    Unscored(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("conflict: {0}")]
    Conflict(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code used by the CLI's single-line error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::MissingManifest(_) => "missing_manifest",
            Error::InvalidManifest(_) => "invalid_manifest",
            Error::ChunkSizeMismatch { .. } => "chunk_size_mismatch",
            Error::InvalidFactor(_) => "invalid_factor",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Infeasible(_) => "infeasible",
            Error::UnknownFragment(_) => "unknown_fragment",
            Error::UnknownCandidate(_) => "unknown_candidate",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Diverged(_) => "diverged",
            Error::LayoutMismatch(_) => "layout_mismatch",
            Error::MissingFeatures(_) => "missing_features",
            Error::InvalidModel(_) => "invalid_model",
            Error::Log(_) => "decision_log",
            Error::NoPositives => "no_positives",
            Error::Unscored(_) => "unscored",
            Error::OutOfRange(_) => "out_of_range",
            Error::Conflict(_) => "conflict",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

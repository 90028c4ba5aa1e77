use std::path::PathBuf;

/// Errors produced by the engine.
///
/// Variants are split between IO failures (the file system or a socket said
/// no) and validation failures (the bytes were read but the content violates
/// a contract). Callers that need to map errors to exit codes or HTTP
/// statuses use [`Error::is_io`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"OVFT\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("payload size mismatch: header describes {expected} bytes, file holds {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid point cloud: {0}")]
    InvalidPointCloud(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("inconsistent feature dimension: image {image} has C={found}, expected C={expected}")]
    InconsistentFeatureDim {
        image: usize,
        expected: usize,
        found: usize,
    },

    #[error("image {image} has no depth map but depth is required")]
    MissingDepth { image: usize },

    #[error("invalid depth map in image {image}: {detail}")]
    InvalidDepth { image: usize, detail: String },

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("no point has any view; nothing to supervise")]
    NoSupervision,

    #[error("empty label")]
    EmptyLabel,

    #[error("unknown prompt(s): {}", .0.join(", "))]
    UnknownPrompt(Vec<String>),

    #[error("invalid prompt set: {0}")]
    InvalidPromptSet(String),

    #[error("query embedding is the zero vector")]
    ZeroQuery,

    #[error("point cloud carries no region ids")]
    NoRegions,

    #[error("prediction {0} does not address any prompt of the label map")]
    UnmappedPrompt(i64),

    #[error("label {label} outside [0, {num_classes})")]
    LabelOutOfRange { label: i64, num_classes: usize },

    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures of the environment rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

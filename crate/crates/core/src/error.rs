use thiserror::Error;

pub type Result<T, E = SegError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty seed or stroke set")]
    EmptySeeds,
    #[error("voxel {0} unreached by every label")]
    Unreached(usize),
    #[error("unknown label {0}")]
    UnknownLabel(u16),
    #[error("voxel out of bounds: {0}")]
    OutOfBounds(String),
    #[error("impulse inconsistency: {0}")]
    ImpulseSign(String),
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("config digest mismatch: log {expected}, computed {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("checksum mismatch: recorded {expected}, replayed {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

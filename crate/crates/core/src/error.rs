use std::path::PathBuf;

use thiserror::Error;

/// Every failure the harness can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },

    #[error("value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid class count {0} (must be 1..=254)")]
    InvalidClassCount(usize),

    #[error("saliency map must be binarized before fusion")]
    NotBinarized,

    #[error("threshold {0} is out of range")]
    ThresholdOutOfRange(f64),

    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },

    #[error("no class has a non-zero union; the matrix carries no evaluable pixels")]
    NoValidClasses,

    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("{0} unexpected trailing bytes")]
    TrailingData(u64),

    #[error("unsupported PNG format: {0}")]
    UnsupportedPngFormat(String),

    #[error("PNG decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("PNG encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("label value {value} at index {index} is not a valid code for {class_count} classes")]
    InvalidLabelValue {
        index: usize,
        value: u8,
        class_count: usize,
    },

    #[error("manifest line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("duplicate id {id:?} on manifest line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("label {label} is out of range for {class_count} classes")]
    LabelOutOfRange { label: i64, class_count: usize },

    #[error("class subset must be non-empty")]
    EmptySubset,

    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),

    #[error("no threshold given for method {0:?}")]
    MissingTau(String),

    #[error("missing file for {id}: {}", path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>) -> Self {
        Error::DimensionMismatch { what: what.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches an image id, unless one is already attached.
    pub fn for_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } | e @ Error::MissingFile { .. } => e,
            other => Error::Sample {
                id: id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with any image-id wrapping removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

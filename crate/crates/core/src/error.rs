use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image has an alpha channel; only opaque RGB or grayscale input is supported")]
    AlphaUnsupported,

    #[error("unsupported pixel format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Archive(#[from] ArchiveError),

    #[error("evaluator failed at grid point k={k}, qs_af={qs_af}: {message}")]
    Evaluator { k: u8, qs_af: u16, message: String },

    #[error("DCT bound violated in band ({row},{col}): |C| = {value} > {bound}")]
    BoundViolated {
        row: usize,
        col: usize,
        value: f64,
        bound: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    ImageCodec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by reading or writing the filesystem.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::ImageCodec {
                    source: image::ImageError::IoError(_),
                    ..
                }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

/// Structured failures when reading a coefficient archive.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchiveError {
    #[error("archive truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("bad magic {0:?}, expected \"DSH1\"")]
    BadMagic([u8; 4]),

    #[error("invalid header field {field}: {value}")]
    BadHeader { field: &'static str, value: u32 },

    #[error("config hash mismatch: archive {archive}, supplied config {supplied}")]
    HashMismatch { archive: String, supplied: String },

    #[error("{0} trailing bytes after level data")]
    TrailingBytes(usize),
}

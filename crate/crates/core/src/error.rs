use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-binary entry {value} at flat index {index}")]
    NonBinary { index: usize, value: f32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed data at byte offset {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: checksum mismatch (expected {expected}, got {actual})")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("corrupt section '{section}': fingerprint mismatch")]
    Corrupt { section: String },

    #[error("empty dataset split '{0}'")]
    EmptySplit(String),

    #[error("training diverged at step {step}: first non-finite output in layer '{layer}'")]
    Divergence { step: usize, layer: String },

    #[error("engine mismatch at input index {index}: float label {float_label}, packed label {packed_label}")]
    EngineMismatch {
        index: usize,
        float_label: usize,
        packed_label: usize,
    },

    #[error("download failed for {url}: {detail}")]
    Download { url: String, detail: String },

    #[error("{0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

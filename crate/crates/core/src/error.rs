use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A WAV file could not be decoded; `field` names the offending header field.
    #[error("WAV decode error in {field}: {detail}")]
    WavDecode { field: &'static str, detail: String },

    #[error("manifest error at line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input too short: got {got} {unit}, need at least {min}")]
    TooShort {
        got: usize,
        min: usize,
        unit: &'static str,
    },

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRate { left: u32, right: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid room: {0}")]
    Room(String),

    #[error("{0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

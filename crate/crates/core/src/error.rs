use std::path::PathBuf;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("log of non-positive value {value} at flat index {index}")]
    LogDomain { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("bad magic: expected \"{}\", found \"{}\"", magic_str(expected), magic_str(found))]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes after payload: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },

    #[error("label byte {value} at frame {index} is not 0 or 1")]
    InvalidLabel { index: usize, value: u8 },

    #[error("matrix size overflow: d={d}, T={t}")]
    SizeOverflow { d: u64, t: u64 },

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest error in {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("strategy {0} requires history")]
    NoHistory(&'static str),

    #[error("segment has no positive frames")]
    NoPositives,

    #[error("no user contributes a training segment")]
    EmptyTrainingSet,

    #[error("numeric abort: {0}")]
    NumericAbort(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Version { .. }
                | Error::Truncated { .. }
                | Error::SizeOverflow { .. }
                | Error::TrailingBytes { .. }
                | Error::InvalidLabel { .. }
                | Error::Shape { .. }
                | Error::Dimension { .. }
                | Error::NonFiniteInput(_)
                | Error::Manifest { .. }
                | Error::Checkpoint(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Config(_)
                | Error::EmptyTrainingSet
                | Error::NoHistory(_)
        )
    }

    /// True for aborts caused by the numerics (non-finite loss or gradient).
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, Error::NumericAbort(_))
    }
}

fn magic_str(m: &[u8; 4]) -> String {
    m.escape_ascii().to_string()
}

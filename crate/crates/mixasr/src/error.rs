use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by the exit codes the CLI maps them to: usage and
/// configuration problems, data/file problems, and numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("stream index {index} out of range (n_streams = {n_streams})")]
    StreamOutOfRange { index: usize, n_streams: usize },

    #[error("unknown token index {0}")]
    UnknownToken(usize),

    #[error("loss matrix is not square: {rows}x{cols}")]
    NonSquareMatrix { rows: usize, cols: usize },

    #[error("instance too large for exhaustive enumeration: {0} paths")]
    InstanceTooLarge(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("truncated payload in {path}: wanted {wanted} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        wanted: usize,
        found: usize,
    },

    #[error("dimensions in {path} overflow the addressable payload size")]
    DimOverflow { path: PathBuf },

    #[error("malformed record in {path} at line {line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite loss encountered: {0}")]
    NonFiniteLoss(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("output directory {0} exists and is not empty (pass --force to overwrite)")]
    OutputDirExists(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("channel count mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("inverse transform left an imaginary residue of {residue:e}")]
    ImaginaryResidue { residue: f64 },

    #[error("selection is empty")]
    EmptySelection,

    #[error("singular normal equations at frequency bin {bin}")]
    Singular { bin: usize },

    #[error("selection is inconsistent with the filter: {0}")]
    InconsistentSelection(String),

    #[error("selection cache is stale; rebuild it after replacing the filter")]
    StaleCache,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate box ({w} x {h})")]
    DegenerateBox { w: f64, h: f64 },

    #[error("not enough frames: need at least {needed}, got {got}")]
    NotEnoughFrames { needed: usize, got: usize },

    #[error("bad magic in feature file: {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported feature file version {0}")]
    Version(u32),

    #[error("feature file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed {what} at {path}:{line}: {msg}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("motion leaves the frame at frame {frame}")]
    MotionEscapes { frame: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

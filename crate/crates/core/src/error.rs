use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{prim}: shape mismatch: {detail}")]
    Shape { prim: &'static str, detail: String },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-power signal")]
    ZeroPower,

    #[error("infinite PSNR (mse is zero)")]
    InfinitePsnr,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("idx: {0}")]
    Idx(String),

    #[error("environment: {0}")]
    Env(String),

    #[error("replay buffer holds {have} transitions, {want} requested")]
    BufferUnderfilled { have: usize, want: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// `line` is 0 for whole-config validation failures.
    #[error("config{}: key `{key}`: {msg}", if *line > 0 { format!(" line {line}") } else { String::new() })]
    Config { line: usize, key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(prim: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { prim, detail: detail.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

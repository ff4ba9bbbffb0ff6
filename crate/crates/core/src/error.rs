use std::path::PathBuf;

/// Errors produced anywhere in the crate. Each variant maps to one error
/// category reported by the command line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension error: cannot combine shapes {lhs:?} and {rhs:?} ({op})")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("layout error: {0}")]
    Layout(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("file error: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("parameter `{name}`: manifest shape {manifest:?} does not match model shape {model:?}")]
    ShapeMismatch {
        name: String,
        manifest: Vec<usize>,
        model: Vec<usize>,
    },

    #[error("params.bin is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("params.bin has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: u64 },

    #[error("checkpoint stores {found} scalars but the model uses {expected}")]
    DtypeMismatch { expected: String, found: String },

    #[error("parameter `{0}` is missing from the manifest")]
    MissingParam(String),

    #[error("manifest lists unknown parameter `{0}`")]
    UnknownParam(String),
}

impl Error {
    /// Short category name, used for the `error[<category>]` prefix of CLI
    /// diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Dimension { .. } => "dimension",
            Error::Layout(_) => "layout",
            Error::Config(_) => "config",
            Error::Parameter(_) => "parameter",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "file",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

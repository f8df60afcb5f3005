use std::path::PathBuf;

/// Every failure the library reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an API contract (non-scalar loss, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model description that cannot be built.
    #[error("build error: {0}")]
    Build(String),

    /// Invalid input data or parameters.
    #[error("invalid input: {0}")]
    Input(String),

    /// Malformed bytes in an external file format.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint whose manifest and payload disagree.
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    /// A checkpoint that does not fit the model it is loaded into.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Bad run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

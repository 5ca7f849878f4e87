use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but does not have the expected encoding.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("unknown config key '{0}'")]
    UnknownKey(String),

    #[error("invalid value for config key '{key}': {message}")]
    ConfigValue { key: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("evaluation found no valid ground-truth pixels")]
    EmptyEvaluation,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("non-finite {component}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { component: String, step: Option<u64> },

    /// Inputs that violate a cross-argument contract, e.g. ground truth
    /// present where the mask says it is missing.
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

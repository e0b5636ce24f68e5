use std::path::PathBuf;

/// Crate-wide error type. The CLI maps variants onto exit codes:
/// config problems exit 1, data/checkpoint problems exit 2, numeric
/// failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("data format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("epoch {epoch}, pair {pair}: {source}")]
    Training {
        epoch: usize,
        pair: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 data/checkpoint, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Format { .. } | Error::Checkpoint(_) | Error::Io { .. } => 2,
            Error::Shape { .. } | Error::NonFinite { .. } | Error::Contract(_) => 3,
            Error::Training { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

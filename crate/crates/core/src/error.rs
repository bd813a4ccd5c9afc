use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while reading a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id `{id}`): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ndcore::Error),
    #[error("invalid dataset: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Ingestion(Vec<Issue>),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    Dimension {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("training diverged at step {step}: {component} loss is not finite")]
    Diverged { step: u64, component: &'static str },
    #[error("example `{0}` has no answer candidate")]
    NoAnswer(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Core(ndcore::Error::contract(msg))
    }
}

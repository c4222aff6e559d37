use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] plm_core::Error),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error("tensor `{tensor}` needs {needed} bytes in total but the memory limit is {limit} bytes")]
    Capacity { tensor: String, needed: u64, limit: u64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("benchmark: {0}")]
    Bench(String),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        LabError::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

use std::path::PathBuf;

/// Errors produced by the planning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in objective term `{term}`")]
    NonFinite { term: &'static str },
    #[error("non-finite training loss at batch sample {sample}")]
    NonFiniteLoss { sample: usize },
    #[error("scene generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("goal pose is unreachable after {attempts} attempts")]
    UnreachableGoal { attempts: usize },
    #[error("no restart produced an acceptable trajectory")]
    PlanningFailed,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

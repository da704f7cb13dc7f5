use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown prompt id `{0}`")]
    UnknownPrompt(String),

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("prompt construction: {0}")]
    PromptContext(String),

    #[error("invalid strata plan: {}", .0.join("; "))]
    Strata(Vec<String>),

    #[error("partition: {0}")]
    Partition(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("clustering: {0}")]
    Clustering(String),

    #[error("scores: {0}")]
    Scores(String),

    #[error("analysis: {0}")]
    Analysis(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing upstream artifacts: {0}")]
    MissingStage(String),

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn artifact(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at step {step}: {what}")]
    Numeric { step: u64, what: String },

    #[error("insufficient dwells for lifetime estimate (P: {n_p}, AP: {n_ap}, need {need} each)")]
    Estimation { n_p: usize, n_ap: usize, need: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("IDX format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch too small: need at least {needed} points, got {got}")]
    BatchSize { needed: usize, got: usize },

    #[error("unknown ablation config {name:?}; valid names: {valid}")]
    UnknownConfig { name: String, valid: String },

    #[error("class {0} is not present in the dataset")]
    MissingClass(u32),

    #[error("idx parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plan error (line {line}): {msg}")]
    Plan { line: usize, msg: String },

    #[error("training aborted (trial {trial}, epoch {epoch}, step {step}): term `{term}` is not finite ({value}); lower alpha_da or learning rate, batch norm layers guard against vanishing gradients")]
    NonFinite {
        trial: usize,
        epoch: usize,
        step: usize,
        term: String,
        value: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the error came from a training run going non-finite.
    pub fn is_training_abort(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

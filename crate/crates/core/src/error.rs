use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("result of {rows}x{cols} exceeds the dimension cap {cap}")]
    SizeLimit { rows: usize, cols: usize, cap: usize },

    #[error("stable rank is undefined for a zero matrix")]
    UndefinedStableRank,

    #[error("projector has no factors yet; call maybe_refresh first")]
    UninitializedProjector,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("step size {eta} is unstable: eta * lambda_max = {product} >= 1")]
    Unstable { eta: f64, product: f64 },

    #[error("bound is undefined: {0}")]
    UndefinedBound(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("training diverged at step {step} (last finite loss {last_loss})")]
    Divergence { step: u64, last_loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

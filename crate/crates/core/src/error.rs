use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("right-hand side has non-zero mean {mean:e} in component {component} (periodic problem without massive term)")]
    NotSolvable { component: usize, mean: f64 },

    #[error("under-resolved correlation length: epsilon = {epsilon} < 4h = {min}")]
    UnderResolved { epsilon: f64, min: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e}, threshold {threshold:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        threshold: f64,
        history: Vec<f64>,
    },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("rate fit: {0}")]
    Fit(String),

    #[error("task {task} failed: {source}")]
    Task {
        task: String,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

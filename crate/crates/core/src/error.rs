use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("root finding failed on branch {branch} at depth {depth}")]
    RootFinding { branch: usize, depth: usize },

    #[error("orbit left the branch domains at time {time}")]
    Escape { time: usize },

    #[error("limit did not converge: bracket [{lower}, {upper}] wider than {tolerance}")]
    NonConvergence {
        lower: f64,
        upper: f64,
        tolerance: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("inconsistent bracket: lower {lower} exceeds upper {upper}")]
    InvertedBracket { lower: f64, upper: f64 },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("harvest failed at stage {stage}: kept mass {achieved:.4} below {required:.4}")]
    Harvest {
        stage: usize,
        achieved: f64,
        required: f64,
    },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A state coefficient left the finite range. `step` is the first bad step.
    #[error("numerical divergence at step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },

    #[error("degenerate noise intensity H = {value} at t = {t}, u = {u}")]
    Nondegeneracy { t: f64, u: f64, value: f64 },

    /// A required hypothesis check failed; the report names the failures.
    #[error("hypothesis check failed: {0}")]
    HypothesisFailed(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("optimizer did not converge after {iterations} iterations (best value {best}, gradient norm {grad_norm})")]
    OptimizationFailed {
        best: f64,
        grad_norm: f64,
        iterations: usize,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

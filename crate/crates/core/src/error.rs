use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("no convergence after {iterations} outer iterations (max displacement {displacement:.3e}, max residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        displacement: f64,
        residual: f64,
    },

    #[error("contact resolution failed: {0}")]
    Contact(String),

    #[error("invalid deformation sample: {0}")]
    InvalidSample(String),

    #[error("invalid moduli: {0}")]
    InvalidModuli(String),

    #[error("underdetermined fit; unidentifiable coefficients: {}", coefficients.join(", "))]
    UnderdeterminedFit { coefficients: Vec<String> },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("stage `{stage}` requires `{missing}`: {reason}")]
    StageDependency {
        stage: String,
        missing: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

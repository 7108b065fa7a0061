use std::path::PathBuf;

use thiserror::Error;

/// Every failure the laboratory can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("degenerate metric at node {node:?}: {reason}")]
    DegenerateMetric { node: Vec<usize>, reason: String },

    #[error("non-finite value in field `{0}`")]
    NonFinite(String),

    #[error("unsupported derivative order {0} (at most 3)")]
    RankOverflow(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("positivity lost at node {node}: u = {value:e}")]
    PositivityLoss { node: usize, value: f64 },

    #[error("field `f` is required for this step")]
    MissingPotential,

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("requested {requested} eigenvalues but only {available} modes are resolvable")]
    TooManyModes { requested: usize, available: usize },

    #[error("integral is unbounded for beta = {0} (needs beta > 1)")]
    UnboundedIntegral(f64),

    #[error("invalid time: {0}")]
    InvalidTime(String),

    #[error("identity checks require gauge = none")]
    GaugeNotAllowed,

    #[error("missing checkpoints: {0:?}")]
    MissingCheckpoints(Vec<String>),

    #[error("run directory {0} holds a partial run")]
    PartialRun(PathBuf),

    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed field blob: {0}")]
    Blob(String),

    #[error("io error on {path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

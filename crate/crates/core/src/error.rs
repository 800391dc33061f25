use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {state:?} lies outside the domain box")]
    OutOfDomain { state: Vec<f64> },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constant estimation failed: {0}")]
    Estimation(String),

    #[error("barrier QP infeasible at t = {t}: best achievable slack {best_slack:e}")]
    QpInfeasible { t: f64, best_slack: f64 },

    #[error("backup law undefined at t = {t}: {reason}")]
    BackupPrecondition { t: f64, reason: String },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("controller mode {mode} requires a {missing}")]
    MissingDependency { mode: String, missing: &'static str },

    #[error("malformed weight file: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

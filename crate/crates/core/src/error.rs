use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("column `{0}` has no observed values and cannot be imputed")]
    Unimputable(String),

    #[error("treatment arm {arm} is empty")]
    SingleArm { arm: u8 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("logistic regression did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no propensity model could be fitted: {0}")]
    NoModel(String),

    #[error("pooled standard deviation is zero while means differ ({mean0} vs {mean1})")]
    InfiniteEffect { mean0: f64, mean1: f64 },

    #[error("kendall tau is undefined when one ranking is entirely tied")]
    UndefinedTau,

    #[error("A2A unavailable: {failed} of {total} bootstraps failed")]
    A2AUnavailable { failed: usize, total: usize },

    #[error("no candidate is valid by SMD")]
    NoSelection,

    #[error("internal error: {0}")]
    Internal(String),
}

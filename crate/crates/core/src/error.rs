//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),

    #[error("observation outside likelihood support: {0}")]
    BadObservation(String),

    #[error(
        "newton mode search did not converge after {iterations} iterations \
         (|grad| = {grad_norm:.3e}, theta = {theta:?})"
    )]
    NewtonDiverged {
        iterations: usize,
        grad_norm: f64,
        theta: Vec<f64>,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("fixed-effect covariance block is numerically singular (condition estimate {cond:.3e})")]
    SingularFixedEffects { cond: f64 },

    #[error("marginal grid degenerate: {0}")]
    DegenerateGrid(String),

    #[error("hyperparameter exploration failed: {0}")]
    Exploration(String),

    #[error("mcmc: {0}")]
    Mcmc(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

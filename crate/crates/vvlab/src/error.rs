//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("assumption violation: {0}")]
    AssumptionViolation(String),
    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),
    #[error("energy {e} below ground energy {e0}")]
    EnergyBelowGround { e: f64, e0: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("trajectory from x = {x} exits after {t_exit} < t = {t}")]
    TrajectoryExited { x: f64, t: f64, t_exit: f64 },
    #[error("under-resolved discretization: {0}")]
    Resolution(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("ill-conditioned family: {0}")]
    IllConditioned(String),
    #[error("insufficient family: {0}")]
    InsufficientFamily(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("series truncation: {0}")]
    Truncation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

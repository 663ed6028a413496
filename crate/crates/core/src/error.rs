//! Common error type for the simulation and validation pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its documented domain (off-grid frequency,
    /// negative bandwidth, utilization outside [0, 1], ...).
    #[error("input domain: {0}")]
    InputDomain(String),

    /// A model invariant did not hold (residency not summing to 1,
    /// additivity broken, ...).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// An entity id (core, socket, container) was not found.
    #[error("lookup: {0}")]
    Lookup(String),

    /// A scenario or deployment is inconsistent (core over-subscription,
    /// not enough free cores, bad isolation flags, ...).
    #[error("configuration: {0}")]
    Configuration(String),

    /// The calibration targets cannot be met.
    #[error("calibration infeasible: {0}")]
    Calibration(String),

    /// A baseline measurement was too unstable to accept.
    #[error("baseline rejected: {0}")]
    BaselineRejected(String),

    /// Data cleaning would discard too much of a series.
    #[error("data quality: {0}")]
    DataQuality(String),

    /// An aggregate was requested over an empty series.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Coefficient of variation is undefined for a non-positive mean.
    #[error("undefined CV: {0}")]
    UndefinedCv(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

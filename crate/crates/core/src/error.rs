//! Error type shared by all curveclust modules.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid basis specification: {0}")]
    InvalidBasisSpec(String),

    #[error("{what} = {value} is outside the basis domain [0, 1]")]
    OutsideDomain { what: &'static str, value: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("basis matrix for subject '{subject}' is rank deficient ({rows}x{cols}); the SVD re-basis needs full column rank")]
    RankDeficient {
        subject: String,
        rows: usize,
        cols: usize,
    },

    #[error("covariance factorization failed for {0} (not positive definite after ridge repair)")]
    Factorization(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("series for subject '{subject}' is too short (n = {n}, need at least 2)")]
    TooShort { subject: String, n: usize },

    #[error("landmark {value} for subject '{subject}' must lie strictly inside (0, 1)")]
    InvalidLandmark { subject: String, value: f64 },

    #[error("warp target {0} must lie strictly inside (0, 1)")]
    InvalidWarpTarget(f64),

    #[error("subject '{subject}' is missing required covariate '{field}'")]
    MissingCovariate { subject: String, field: String },

    #[error("model/data mismatch: {0}")]
    ModelMismatch(String),

    #[error("non-finite component log-density for subject '{subject}'")]
    NonFiniteDensity { subject: String },

    #[error("cluster {cluster} stayed empty after {retries} re-seeding attempts")]
    EmptyCluster { cluster: usize, retries: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular linear system in {0} (still singular after ridge repair)")]
    SingularSystem(String),

    #[error("numerical failure at EM iteration {iteration}: {reason}")]
    NumericalFailure { iteration: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by ingestion, network construction and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: missing cell for unit {unit}, period {period}")]
    Balance { unit: String, period: String },

    #[error("duplicate row for unit {unit}, period {period}")]
    Duplicate { unit: String, period: String },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("coincident facilities {i} and {j} fall inside the distance threshold")]
    DegenerateDistance { i: usize, j: usize },

    #[error("row {row} has nonzero entries summing to zero; cannot normalize")]
    Normalization { row: usize },

    #[error("singular design ({context}), condition number {condition:e}")]
    SingularDesign { context: String, condition: f64 },

    #[error("weak instrument: fitted values for candidate {candidate} of unit {unit} vanish")]
    WeakInstrument { unit: usize, candidate: usize },

    #[error("underidentified: {instruments} instruments for {regressors} regressors")]
    Underidentified { instruments: usize, regressors: usize },

    #[error("parameter {param}: only {units} contributing units, need at least 2")]
    InsufficientUnits { param: usize, units: usize },

    #[error("degenerate group: {0}")]
    DegenerateGroup(String),

    #[error("unstable system: spectral radius {rho} of the spatial multiplier is not below 1")]
    Stability { rho: f64 },

    #[error("S(Psi) is numerically singular")]
    Singularity,

    #[error("{unstable} of {draws} simulation draws were unstable; standard errors unreliable")]
    UnreliableSe { unstable: usize, draws: usize },

    #[error("quantile error: {0}")]
    Quantile(String),

    #[error("all units share one label; homophily is degenerate")]
    DegenerateLabels,

    #[error("logistic fit did not converge after {iterations} iterations (score norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than
    /// by the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain(_)
                | Error::Dimension(_)
                | Error::Parse { .. }
                | Error::Balance { .. }
                | Error::Duplicate { .. }
                | Error::Metadata(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                row,
                msg: format!("{other:?}"),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

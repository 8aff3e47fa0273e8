use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {message}")]
    Schema { message: String },

    #[error("row {line} (id {id}): {rule}")]
    Row { line: usize, id: String, rule: String },

    #[error("cohort is empty")]
    EmptyCohort,

    #[error("covariate '{0}' is constant and cannot be standardized")]
    DegenerateCovariate(String),

    #[error("cohort is already standardized")]
    AlreadyStandardized,

    #[error("unknown covariate '{name}'; available: {available}")]
    UnknownCovariate { name: String, available: String },

    #[error("no events for transition {0}")]
    NoEvents(String),

    #[error("empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },

    #[error("singular information matrix; collinear or constant columns: {columns}")]
    RankDeficient { columns: String },

    #[error("{what} did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("every scheduled pair is invalid; the pairwise objective is identically zero")]
    DegenerateObjective,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{dropped} of {total} bootstrap replicates failed (limit 20%)")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::RankDeficient { .. }
                | Error::DegenerateObjective
                | Error::Singular(_)
                | Error::TooManyDropped { .. }
                | Error::EmptyRiskSet { .. }
                | Error::NoEvents(_)
        )
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group index {index} out of range (J = {n_groups})")]
    GroupIndex { index: usize, n_groups: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("unsupported penalty exponent {0}; only alpha in [2, inf] is supported")]
    UnsupportedExponent(f64),

    #[error("invalid fold count: {folds} folds for {n} observations")]
    InvalidFolds { folds: usize, n: usize },

    #[error("refit support has {support} coefficients but only {n} observations")]
    OverdeterminedRefit { support: usize, n: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("invalid coefficient spec: {0}")]
    InvalidSpec(String),

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("column {0} is constant; correlation undefined")]
    UndefinedCorrelation(usize),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid sweep: k_max = {k_max} but J = {n_groups}")]
    InvalidSweep { k_max: usize, n_groups: usize },

    #[error("no metrics to render")]
    EmptyMetrics,

    #[error("bootstrap replicate {replicate} failed to converge after {attempts} attempts")]
    NonConvergence { replicate: usize, attempts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Module the error originated from, for CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::GroupIndex { .. } | Error::InvalidPartition(_) => "model",
            Error::UnsupportedExponent(_) | Error::InvalidFolds { .. } => "solver",
            Error::OverdeterminedRefit { .. } => "pointest",
            Error::NonConvergence { .. } => "bootstrap",
            Error::InvalidSpec(_)
            | Error::InvalidGrouping(_)
            | Error::UndefinedCorrelation(_)
            | Error::Parse { .. } => "designs",
            Error::InvalidSweep { .. } | Error::EmptyMetrics | Error::InvalidConfig(_) => {
                "experiments"
            }
            Error::InvalidData(_) | Error::NumericFailure(_) => "numeric",
            Error::Io(_) | Error::Json(_) => "io",
        }
    }
}

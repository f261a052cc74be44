use thiserror::Error;

/// Which treatment arm a failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Arm {
    Treated,
    Control,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Treated => f.write_str("treated"),
            Arm::Control => f.write_str("control"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: treatment value `{value}` is not 0 or 1")]
    InvalidTreatment { row: usize, value: String },

    #[error("row {row}: non-finite or unparsable value in column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("{0} group empty")]
    EmptyGroup(Arm),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("design matrix for {0} is rank deficient")]
    RankDeficient(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    #[error("zero is not inside the convex hull of the {0} arm constraint vectors")]
    HullViolation(Arm),

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("confidence interval root-finding failed: {0}")]
    Bracket(String),

    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for errors caused by the input data rather than by the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Csv(_)
                | Error::MissingColumn(_)
                | Error::InvalidTreatment { .. }
                | Error::NonFinite { .. }
                | Error::EmptyGroup(_)
                | Error::InvalidSample(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MissingColumn: {0}")]
    MissingColumn(String),

    #[error("UnexpectedColumn: {0}")]
    UnexpectedColumn(String),

    /// `row` is the 1-based data row (the header is not counted).
    #[error("NonBinaryTreatment: row {row} has t = {value}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("NonFiniteValue: row {row}, column {column}")]
    NonFiniteValue { row: usize, column: String },

    #[error("InvalidNumber: row {row}, column {column}: {value:?}")]
    InvalidNumber { row: usize, column: String, value: String },

    #[error("Csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),

    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("TooFewRows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("EmptyArm: no rows with t = {arm}")]
    EmptyArm { arm: u8 },

    #[error("TooFewObservations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("RankDeficient: ridge precision is not positive definite")]
    RankDeficient,

    #[error("NoConvergence: Newton iteration cap hit with gradient norm {grad_norm:e}")]
    NoConvergence { grad_norm: f64 },

    #[error("DegenerateFold: fold {fold}: {reason}")]
    DegenerateFold { fold: usize, reason: String },

    #[error("EmptySubgroup: no test-fold rows satisfy {0}")]
    EmptySubgroup(String),

    #[error("ZeroSubgroupProbability: estimated P(A) is 0 for {0}")]
    ZeroSubgroupProbability(String),

    #[error("LengthMismatch: fold draw vectors have lengths {0:?}")]
    LengthMismatch(Vec<usize>),

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Input and configuration problems, as opposed to failures of the
    /// estimation itself. The CLI maps the former to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::MissingColumn(_)
            | Error::UnexpectedColumn(_)
            | Error::NonBinaryTreatment { .. }
            | Error::NonFiniteValue { .. }
            | Error::InvalidNumber { .. }
            | Error::Csv(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::ShapeMismatch(_)
            | Error::InvalidConfig(_) => true,
            Error::InFold { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Error {
        match self {
            e @ Error::InFold { .. } | e @ Error::DegenerateFold { .. } => e,
            e => Error::InFold { fold, source: Box::new(e) },
        }
    }
}

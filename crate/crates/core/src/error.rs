use thiserror::Error;

/// Errors produced anywhere in the balancing pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KdbError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("treatment value {value} at row {row} is not exactly 0 or 1")]
    NonBinaryTreatment { row: usize, value: f64 },

    #[error("{group} group is empty; both groups need at least one unit")]
    EmptyGroup { group: &'static str },

    #[error("non-finite value in {field} at row {row}")]
    NonFiniteValue { field: &'static str, row: usize },

    #[error("all points are identical; no positive pairwise distance for the bandwidth")]
    AllPointsIdentical,

    #[error("invalid bandwidth {0}; sigma2 must be positive and finite")]
    InvalidBandwidth(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel distance is zero; the witness function is undefined")]
    DegenerateWitness,

    #[error("equality constraints are rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("quadratic term is singular")]
    SingularQ,

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("balance constraints are infeasible: {0}")]
    InfeasibleBalance(String),

    #[error("weights of scheme {found} cannot be used for a {expected} estimate")]
    SchemeMismatch { expected: &'static str, found: &'static str },

    #[error("zero variance for covariate {covariate}")]
    ZeroVariance { covariate: usize },

    #[error("need at least {needed} estimates, got {got}")]
    TooFewEstimates { needed: usize, got: usize },

    #[error("potential outcomes are required but missing")]
    MissingPotentialOutcomes,

    #[error("empty sample")]
    EmptySample,

    #[error("treatment assignment left the {group} group empty")]
    DegenerateAssignment { group: &'static str },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KdbError {
    fn from(e: std::io::Error) -> Self {
        KdbError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KdbError>;

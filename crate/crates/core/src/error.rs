use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable {0} is not on this tape")]
    UnknownVar(usize),

    #[error("gradient check: non-finite value at coordinate {coordinate} of input {input}")]
    GradCheckNonFinite { input: usize, coordinate: usize },

    #[error("gradient check: evaluation point lies {margin:e} from a max/min kink (need >= {required:e})")]
    NearKink { margin: f64, required: f64 },

    #[error("{op}: negative strength {value}")]
    NegativeStrength { op: &'static str, value: f64 },

    #[error("invalid message: {0}")]
    InvalidMessage(String),

    #[error("meaning not in space: {0}")]
    MeaningOutsideSpace(String),

    #[error("unknown Dyck token {token} for k = {k}")]
    UnknownToken { token: usize, k: usize },

    #[error("meaning space of size {size} exceeds the cap of {cap}")]
    SpaceTooLarge { size: u128, cap: usize },

    #[error("length mismatch: {0}")]
    Length(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("receiver has no prior head")]
    NoPriorHead,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

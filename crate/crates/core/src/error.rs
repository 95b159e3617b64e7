use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} expects {expected} input")]
    TypeMismatch { op: &'static str, expected: &'static str },

    #[error("complex division by a value with modulus {modulus:e} below {eps:e}")]
    DivisionDegenerate { modulus: f64, eps: f64 },

    #[error("FFT length {0} is not a power of two")]
    NonPowerOfTwo(usize),

    #[error("tape was cleared; no graph left to differentiate")]
    TapeConsumed,

    #[error("unsupported QAM order {0}")]
    UnsupportedOrder(u32),

    #[error("unknown channel profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("sampling rate infeasible: {0}")]
    RateInfeasible(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("ground-truth labels touched by a label-free training run ({0})")]
    LabelAccessViolation(&'static str),

    #[error("tensor file version {found} not supported (expected {expected})")]
    FormatVersionMismatch { found: u16, expected: u16 },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

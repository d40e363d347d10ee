use crate::volume::Dims;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Dims, actual: Dims },

    #[error("operation needs probability samples, but this sample set holds labels only")]
    ProbRequired,

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("not an SVOL container (bad magic)")]
    BadMagic,

    #[error("container truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("invalid header field: {0}")]
    InvalidHeaderField(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse column `{column}` from {value:?}")]
    UnparseableField {
        row: usize,
        column: String,
        value: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no usable input records")]
    EmptyInput,

    #[error("value {0} is outside [0, 1]")]
    OutOfRange(f64),

    #[error("sample counts must be strictly increasing and at most {available}, got {count}")]
    CountOutOfRange { count: usize, available: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("insufficient data: {n} rows for {k} coefficients")]
    InsufficientData { n: usize, k: usize },

    #[error("phantom geometry does not fit the volume: {0}")]
    GeometryOverflow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("rank deficient: numerical rank {rank} is below the required {target}")]
    RankDeficient { rank: usize, target: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "dimension {d} exceeds the enumeration cap of {cap}: the search visits 2^{d} candidates; \
         raise the cap explicitly if that cost is intended"
    )]
    DimensionCap { d: usize, cap: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label column `{0}` not found")]
    MissingLabel(String),

    #[error("dataset is empty or too small for the requested operation")]
    EmptyDataset,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("column {0} assigned to both parties")]
    OverlappingSplit(usize),

    #[error("invalid vertical split: {0}")]
    InvalidSplit(String),

    #[error("invalid columns: {0}")]
    InvalidColumns(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("matrix is not orthogonal: max |U^T U - I| = {deviation:e}")]
    NotOrthogonal { deviation: f64 },

    #[error("transcript is degenerate (empty or rank 0)")]
    DegenerateTranscript,

    #[error("no binary feature on the passive side")]
    NoBinaryFeatures,

    #[error("subset {subset} contains element {element}, outside universe of size {universe}")]
    InvalidSubset {
        subset: usize,
        element: usize,
        universe: usize,
    },

    #[error("instance too large for brute force: {m} subsets (limit {limit})")]
    TooLarge { m: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

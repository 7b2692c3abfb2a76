use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}: file contains no interactions")]
    EmptyFile(PathBuf),
    #[error("{path}:{line}: rating {rating} outside [1, 5]")]
    RatingOutOfRange {
        path: PathBuf,
        line: usize,
        rating: f64,
    },
    #[error("duplicate interaction (user {user}, item {item})")]
    DuplicateInteraction { user: String, item: String },
    #[error("invalid interaction table: {0}")]
    InvalidTable(String),
    #[error("dataset eliminated by k-core (k = {k})")]
    KCoreEliminated { k: usize },
    #[error("split ratios {0:?} do not sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("bad RGF1 magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("RGF1 size mismatch: header implies {expected} payload bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("http request failed: {0}")]
    Http(String),
    #[error("all items are masked")]
    AllMasked,
    #[error("no evaluable users")]
    NoEvaluableUsers,
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("exact oracle limited to d <= 7, got d = {0}")]
    OracleTooLarge(usize),
    #[error("config key {key:?}: {msg}")]
    Config { key: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

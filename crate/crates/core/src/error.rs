use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("bin centers must be strictly increasing")]
    UnsortedBins,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("split {split} s outside [{lower}, {upper}]")]
    SplitOutOfBounds { split: f64, lower: f64, upper: f64 },
    #[error("unknown link {0}")]
    UnknownLink(usize),
    #[error("negative queue length {0}")]
    NegativeQueue(f64),
    #[error("vehicle conservation violated at t={time}: entered {entered}, exited {exited}, on network {on_network}")]
    Conservation {
        time: u64,
        entered: u64,
        exited: u64,
        on_network: u64,
    },
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("not enough replay data: need a window of {needed} steps, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

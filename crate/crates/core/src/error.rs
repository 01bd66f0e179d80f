use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed rational {0:?}, expected \"p/q\"")]
    MalformedRational(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer index {index} out of range 1..={max}")]
    LayerIndex { index: usize, max: usize },
    #[error("unknown statistic {0:?}")]
    UnknownStatistic(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("stale cache: pass recorded for weights generation {cached}, network is at {current}")]
    StaleCache { cached: u64, current: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("trajectory too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },
    #[error("rank deficient: numerical rank {rank} < required {required} ({context})")]
    RankDeficient {
        rank: usize,
        required: usize,
        context: String,
    },
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("enumeration cap exceeded: {candidates} candidates > cap {cap}")]
    CapExceeded { candidates: f64, cap: u64 },
    #[error("zero signal power on output channel {channel}: SNR undefined")]
    ZeroSignalPower { channel: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset has no split labels")]
    MissingSplit,

    #[error("learner fit failed: {0}")]
    Learner(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("kernel density estimation failed: {0}")]
    Kde(String),

    #[error("unknown scenario: setup {setup}, scenario {scenario}")]
    UnknownScenario { setup: u8, scenario: u8 },

    #[error("treatment {t0} is not a precalibrated grid value; recalibration required")]
    RecalibrationRequired { t0: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

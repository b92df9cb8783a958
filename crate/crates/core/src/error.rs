use thiserror::Error;

pub type Result<T> = std::result::Result<T, TsmError>;

#[derive(Debug, Error)]
pub enum TsmError {
    #[error("invalid hazard: {0}")]
    InvalidHazard(String),

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),

    #[error("mass beyond horizon: total cumulative hazard is below the requested level")]
    MassBeyondHorizon,

    #[error("survival underflow at t = {0}")]
    SurvivalUnderflow(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("no events in data")]
    NoEvents,

    #[error("covariates are collinear or carry no information")]
    Collinear,

    #[error("infinite estimate: a covariate perfectly separates the outcome")]
    InfiniteEstimate,

    #[error("separation in logistic regression")]
    Separation,

    #[error("g-estimation root not bracketed on [{lo}, {hi}]")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("stage-1 effect not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("no control information")]
    NoControlInformation,

    #[error("unknown method '{0}'")]
    UnknownMethod(String),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TsmError {
    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TsmError::MassBeyondHorizon
                | TsmError::SurvivalUnderflow(_)
                | TsmError::NoEvents
                | TsmError::Collinear
                | TsmError::InfiniteEstimate
                | TsmError::Separation
                | TsmError::NotBracketed { .. }
                | TsmError::NotIdentifiable(_)
                | TsmError::NoControlInformation
        )
    }
}

use thiserror::Error;

/// Errors raised anywhere in the pricing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exercise dates not strictly increasing at index {index}")]
    NonMonotoneDates { index: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "regression design is rank deficient after damping (condition estimate {condition:.3e})"
    )]
    RankDeficient { condition: f64 },

    #[error("intensity {intensity} at step {step} violates the positivity floor {floor}")]
    IntensityFloor {
        step: usize,
        intensity: f64,
        floor: f64,
    },

    #[error("oracle size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("malformed scenario tree: {0}")]
    Tree(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for configuration problems (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::NonMonotoneDates { .. }
            | Error::InvalidGrid(_)
            | Error::Dimension { .. }
            | Error::Json(_)
            | Error::Tree(_)
            | Error::SizeGuard(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("eigensolver did not converge within {0} iterations")]
    ConvergenceFailure(usize),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("feature row {row} has norm {norm}, expected unit norm")]
    NotNormalized { row: usize, norm: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no positive pair available for any anchor")]
    NoPositiveAvailable,

    #[error("no valid model: every sampled triple was degenerate")]
    NoValidModel,

    #[error("too few points to cluster: {0}")]
    TooFewPoints(usize),

    #[error("benchmark contains no scenes")]
    EmptyBenchmark,

    #[error("deep mode requires a trained model checkpoint")]
    MissingModel,

    #[error("oracle mode requires ground-truth labels on the scene")]
    MissingLabels,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced anywhere in the reduced-order pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sinkhorn over/underflow in direct mode at iteration {iteration}; enable log-domain stabilization")]
    StabilizationRequired { iteration: usize },
    #[error("sinkhorn diverged (NaN) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("sinkhorn divergence failed on pair ({i}, {j}): {source}")]
    GramPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("problem too large for brute-force oracle: {0}")]
    SizeLimit(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("time integration stalled at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the mechanism, solver and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("degenerate instance: every agent value is zero")]
    DegenerateInstance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("redistribution divides by n-1 and needs at least two agents")]
    RedistributionNeedsTwoAgents,

    #[error("alternatives are not in canonical order: V1 = {v1} < V2 = {v2}")]
    NotCanonical { v1: f64, v2: f64 },

    #[error("{solver} stopped after {iterations} iterations with residual {residual:e}")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

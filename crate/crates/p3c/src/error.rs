//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("degenerate selection context: var(diff) <= 0 for candidate {candidate} vs alternative {other}")]
    DegenerateContext { candidate: usize, other: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("cluster size cap {cap} cannot produce {k} groups over {p} alternatives")]
    CapInfeasible { cap: usize, k: usize, p: usize },

    #[error("infeasible comparison-probability target {target} for {events} events")]
    InfeasibleQuantile { target: f64, events: usize },

    #[error("allocation denominator not positive at alternative {index} (value {value})")]
    BadDenominator { index: usize, value: f64 },

    #[error("empty feasible region for the allocation level search")]
    EmptyFeasibleRegion,

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::cpmap::OrderZeroWitness;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid algebra: {0}")]
    InvalidAlgebra(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("element is not hermitian (asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("element is not positive (eigenvalue {eigenvalue:.3e})")]
    NotPositive { eigenvalue: f64 },

    #[error("eigenvalue {eigenvalue} lies outside the domain of {function}")]
    OutsideDomain { eigenvalue: f64, function: String },

    #[error("two-cluster spectral gap violated by eigenvalue {eigenvalue}")]
    GapViolated { eigenvalue: f64 },

    #[error("invalid scalar function: {0}")]
    InvalidFunction(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("map is not of strict order zero: {0}")]
    NotOrderZero(Box<OrderZeroWitness>),

    #[error("step {step} failed: {detail}")]
    PipelineStep { step: String, detail: String },

    #[error("sampling exhausted after {attempts} attempts (seed {seed})")]
    SamplingExhausted { attempts: usize, seed: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn step(step: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::PipelineStep {
            step: step.into(),
            detail: detail.into(),
        }
    }

    /// True for failures of a multi-step construction (as opposed to rejected inputs).
    pub fn is_pipeline_failure(&self) -> bool {
        matches!(self, Error::PipelineStep { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

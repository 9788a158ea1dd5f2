use thiserror::Error;

/// Errors raised by the reduction pipeline.
#[derive(Debug, Error)]
pub enum MorError {
    #[error("Hurst parameter {0} outside the supported range [0.5, 1)")]
    InvalidHurst(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("interpretation error: {0}")]
    Interpretation(String),

    #[error("covariance factorization failed at pivot {index}: {value:e} below threshold {threshold:e}")]
    Factorization { index: usize, value: f64, threshold: f64 },

    #[error("singular implicit step at step {step}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    SingularStep { step: usize, sample: Option<usize> },

    #[error("singular linear operator: {0}")]
    Singular(String),

    #[error("system is not mean-square stable: {0}")]
    Unstable(String),

    #[error("matrix is not positive definite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    NotDefinite { eigenvalue: f64, largest: f64 },

    #[error("requested order {requested} exceeds numerical rank {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MorError {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MorError::Factorization { .. }
                | MorError::SingularStep { .. }
                | MorError::Singular(_)
                | MorError::Unstable(_)
                | MorError::NotDefinite { .. }
                | MorError::Quadrature(_)
        )
    }

    /// Attach a Monte-Carlo sample index to integrator failures.
    pub fn with_sample(self, index: usize) -> Self {
        match self {
            MorError::SingularStep { step, .. } => MorError::SingularStep {
                step,
                sample: Some(index),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, MorError>;

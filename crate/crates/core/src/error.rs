use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("sensor index {index} out of range for {n_sensors} sensors")]
    Index { index: usize, n_sensors: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    Numerical { jitter: f64 },

    #[error("optimizer diverged after {iterations} iterations (last finite objective {objective})")]
    Fit {
        iterations: usize,
        objective: f64,
        last_finite: Vec<f64>,
    },

    #[error("sampler initialization failed: {0}")]
    SamplerInit(String),

    #[error("cannot summarize: {0}")]
    Summary(String),
}

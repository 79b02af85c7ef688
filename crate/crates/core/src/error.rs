use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The Stein (discrete Lyapunov) system is singular or has no positive
    /// definite solution, i.e. the spectral radius is at least one.
    #[error("matrix is not contractive: {0}")]
    NotContractive(String),

    #[error("riccati iteration did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("controller does not stabilize system {system}")]
    Unstable { system: usize },

    #[error("fleet generation failed for system {system} after {retries} redraws")]
    GenerationFailed { system: usize, retries: usize },

    #[error("perturbed controller K{sign}U (sample {sample}) destabilizes system {system}")]
    PerturbationUnstable {
        system: usize,
        sample: usize,
        sign: char,
    },

    #[error("divergence at iteration {iteration}: {reason}")]
    DivergenceDetected { iteration: usize, reason: String },

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("incompatible traces: {0}")]
    IncompatibleTraces(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

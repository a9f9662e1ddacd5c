use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error(
        "disturbance on inhibitory slot {index} is {value}; Wilson-Cowan signals may only drive excitatory populations"
    )]
    InhibitorySlotForcing { index: usize, value: f64 },

    #[error("integration diverged at step {step} (t = {time})")]
    IntegrationDiverged { step: usize, time: f64 },

    #[error("spectral radius estimate did not converge after {iterations} iterations (last change {last_change:e})")]
    SpectralRadiusNoConvergence { iterations: usize, last_change: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("ridge normal equations are numerically singular at lambda = {lambda}; use lambda > 0")]
    SingularRidge { lambda: f64 },

    #[error("linear system for the coexistence equilibrium is singular")]
    SingularEquilibrium,

    #[error("generation retry budget of {budget} exhausted: {diagnostics}")]
    RetryBudgetExhausted { budget: usize, diagnostics: String },

    #[error("detector/manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("no ground truth available for this detection result")]
    MissingGroundTruth,

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: PathBuf, reason: String },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("failed to serialize {what}: {message}")]
    Serialize { what: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration has {got} sites but the lattice has {expected}")]
    ConfigLength { expected: usize, got: usize },

    #[error("spin value {value} at site {site} is not +1 or -1")]
    InvalidSpin { site: usize, value: i8 },

    #[error("{family} expects {expected} coupling values, got {got}")]
    CouplingMismatch {
        family: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite value produced by `{primitive}`")]
    NonFinite { primitive: &'static str },

    #[error("non-finite amplitude ratio for sample {sample} (log-amplitude difference {delta})")]
    NonFiniteRatio { sample: usize, delta: f64 },

    #[error("configuration has no antiparallel pair; exchange moves need a zero-magnetization state")]
    NoAntiparallelPair,

    #[error("acceptance {acceptance:.3e} below floor {floor:.3e} for system {system}")]
    DegenerateSampling {
        system: usize,
        acceptance: f64,
        floor: f64,
    },

    #[error("linear solve failed ({reason}); condition estimate {condition:.3e}")]
    LinearSolve { reason: String, condition: f64 },

    #[error("optimization diverged at step {step}: loss {loss} exceeds limit {limit}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("Hilbert-space dimension {dim} exceeds the limit {limit}")]
    DimensionOverflow { dim: usize, limit: usize },

    #[error("level crossing inside the finite-difference stencil (gap {gap:.3e})")]
    LevelCrossing { gap: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

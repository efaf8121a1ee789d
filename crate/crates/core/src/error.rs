use thiserror::Error;

/// Errors produced by the solvers, the dynamics and the stepping loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid LCP problem: {0}")]
    InvalidProblem(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("no class assignment yields a valid LCP solution")]
    NoValidAssignment,

    #[error("problem dimension {dim} exceeds enumeration limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("clamped block is singular")]
    SingularBlock,

    #[error("unbounded pivot ray while driving index {index}")]
    UnboundedRay { index: usize },

    #[error("pivot iteration cap of {cap} reached")]
    IterationCap { cap: usize },

    #[error("timestep must be non-negative, got {0}")]
    NegativeTimestep(f64),

    #[error("grazing contact: approach speed {speed:e} too small to differentiate time of impact")]
    GrazingContact { speed: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

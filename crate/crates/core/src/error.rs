use thiserror::Error;

use crate::odeint::SolveStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    #[error("mean over an empty axis of shape {shape:?}")]
    EmptyReduction { shape: Vec<usize> },

    #[error("shape {shape:?} holds {expected} elements but {got} values were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("differentiation nested {requested} levels deep; at most {max} are supported")]
    NestingTooDeep { requested: u8, max: u8 },

    #[error("variables belong to different tapes")]
    ForeignTape,

    #[error("parameter vector has {got} elements, layer expects {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("layer {index}: {source}")]
    Layer { index: usize, source: Box<Error> },

    #[error("solver exceeded {max_steps} steps at depth {depth}")]
    MaxStepsExceeded {
        max_steps: usize,
        depth: f64,
        stats: SolveStats,
    },

    #[error("non-finite state at depth {depth}")]
    NonFinite { depth: f64, stats: SolveStats },

    #[error("backward (adjoint) solve failed: {0}")]
    BackwardSolve(Box<Error>),

    #[error("mass matrix of batch element {index} is singular (condition number {condition:e})")]
    SingularMassMatrix { index: usize, condition: f64 },

    #[error("exact divergence limited to {max} dimensions, state has {dim}; use the Hutchinson estimator")]
    DivergenceTooWide { dim: usize, max: usize },

    #[error("non-finite log-probability for batch elements {indices:?}")]
    NonFiniteLogProb { indices: Vec<usize> },

    #[error("{0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Solver statistics carried by solver failures.
    pub fn solve_stats(&self) -> Option<&SolveStats> {
        match self {
            Error::MaxStepsExceeded { stats, .. } | Error::NonFinite { stats, .. } => Some(stats),
            Error::BackwardSolve(inner) => inner.solve_stats(),
            _ => None,
        }
    }

    /// True for failures caused by the numerics (solver blow-up, singular systems).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::MaxStepsExceeded { .. }
            | Error::NonFinite { .. }
            | Error::SingularMassMatrix { .. }
            | Error::NonFiniteLogProb { .. } => true,
            Error::BackwardSolve(inner) => inner.is_numerical(),
            _ => false,
        }
    }
}

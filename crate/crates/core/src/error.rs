//! Error types shared across the crate.

/// Errors produced by solvers, trainers, and table operations.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller violated an operation's contract (bad probabilities, non-positive
    /// weights, invalid configuration values, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Two tables or parameter vectors disagree on a dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A state or action index fell outside the MDP's tables.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A fixed-point iteration hit its iteration cap before reaching tolerance.
    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Backtracking line search could not find an improving step. The last
    /// accepted iterate is carried so callers can inspect or resume from it.
    #[error("line search failed after {backtracks} backtracks (objective {objective})")]
    LineSearchFailure {
        backtracks: u32,
        objective: f64,
        theta: Vec<f64>,
        psi: Vec<f64>,
    },

    /// Training was invoked with no demonstrations.
    #[error("demo set is empty")]
    EmptyDemos,
}

pub type Result<T> = std::result::Result<T, Error>;

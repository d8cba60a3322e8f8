use std::path::PathBuf;

use thiserror::Error;

use crate::model::ProbabilityVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid constraint set: {}", .0.join("; "))]
    InvalidConstraints(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),

    #[error("component {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("NonConvergence: {iterations} iterations, residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("SingularJacobian: fluctuation matrix is numerically singular (redundant or degenerate constraints)")]
    SingularJacobian,

    #[error("InfeasibleDomain: no damped step keeps every denominator positive")]
    InfeasibleDomain,

    #[error(
        "Unbounded: dual objective diverges, constraints are only satisfiable on the boundary"
    )]
    Unbounded,

    #[error("NegativeComponent: second-order component {index} = {value:e}")]
    NegativeComponent {
        index: usize,
        value: f64,
        first_order: ProbabilityVector,
    },

    #[error("NoInteriorPoint: no strictly positive feasible point found")]
    NoInteriorPoint,

    #[error("RankDeficient: null space has dimension {found}, expected {expected}")]
    RankDeficient { expected: usize, found: usize },

    #[error(
        "DegenerateInterval: walk chords collapsed, polytope is effectively lower-dimensional"
    )]
    DegenerateInterval,

    #[error("WrongDimension: polytope has dimension {0}, expected 1")]
    WrongDimension(usize),

    #[error("RegimeMismatch: check requires {expected} regime, constraints are {found}")]
    RegimeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("ZeroRow: constraint row {0} has zero norm")]
    ZeroRow(usize),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Failures of the numerical machinery, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::SingularJacobian
                | Error::InfeasibleDomain
                | Error::Unbounded
                | Error::NegativeComponent { .. }
                | Error::NoInteriorPoint
                | Error::RankDeficient { .. }
                | Error::DegenerateInterval
                | Error::WrongDimension(_)
                | Error::RegimeMismatch { .. }
                | Error::ZeroRow(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

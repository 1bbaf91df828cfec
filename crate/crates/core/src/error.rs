use thiserror::Error;

use crate::coupling::CouplingSolution;
use crate::solver::SolveReport;

/// Which side of a datum an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Input,
    Output,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Input => "input",
            Side::Output => "output",
        })
    }
}

/// Structural problems with a datum. Indices are 1-based, as in the file format.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatumError {
    #[error("{side} exponent list has {found} entries but {expected} {side} dimensions were declared")]
    ExponentCount { side: Side, expected: usize, found: usize },
    #[error("{side} space {index} has dimension 0")]
    ZeroDimension { side: Side, index: usize },
    #[error("{side} exponent {index} is {value}, must be positive")]
    NonPositiveExponent { side: Side, index: usize, value: String },
    #[error("B[{i},{j}] has shape {found_rows}x{found_cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        i: usize,
        j: usize,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("B key {0:?} is not of the form \"i,j\" with 1-based indices in range")]
    BadKey(String),
    #[error("B[{i},{j}] contains a non-finite entry")]
    NonFinite { i: usize, j: usize },
    #[error("ragged matrix rows in {0}")]
    Ragged(String),
}

#[derive(Debug, Error)]
pub enum FrblError {
    #[error("invalid datum: {0}")]
    InvalidDatum(#[from] DatumError),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not symmetric (asymmetry {asymmetry:e}): {what}")]
    Asymmetric { what: String, asymmetry: f64 },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("finiteness: {0}")]
    Finiteness(String),
    #[error("coupling solver hit its iteration cap (gradient residual {:e})", .0.grad_residual)]
    CouplingConvergence(Box<CouplingSolution>),
    #[error("outer ascent did not converge within the iteration budget")]
    SolveConvergence(Box<SolveReport>),
    #[error("geometric: {0}")]
    Geometric(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, FrblError>;

impl From<serde_json::Error> for FrblError {
    fn from(e: serde_json::Error) -> Self {
        FrblError::Parse(e.to_string())
    }
}

impl From<std::io::Error> for FrblError {
    fn from(e: std::io::Error) -> Self {
        FrblError::Io(e.to_string())
    }
}

impl FrblError {
    /// Short machine-readable tag for JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            FrblError::InvalidDatum(_) => "invalid_datum",
            FrblError::Parse(_) => "parse",
            FrblError::InvalidArgument(_) => "invalid_argument",
            FrblError::Asymmetric { .. } => "asymmetric",
            FrblError::NotPositiveDefinite(_) => "not_positive_definite",
            FrblError::Finiteness(_) => "finiteness",
            FrblError::CouplingConvergence(_) => "coupling_convergence",
            FrblError::SolveConvergence(_) => "solve_convergence",
            FrblError::Geometric(_) => "geometric",
            FrblError::Catalog(_) => "catalog",
            FrblError::Io(_) => "io",
        }
    }

    /// Errors caused by what the caller supplied rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FrblError::InvalidDatum(_)
                | FrblError::Parse(_)
                | FrblError::InvalidArgument(_)
                | FrblError::Asymmetric { .. }
                | FrblError::Catalog(_)
                | FrblError::Io(_)
        )
    }
}

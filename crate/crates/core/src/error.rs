use std::fmt;

use thiserror::Error;

/// Category of a problem-specification defect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IssueKind {
    DimensionMismatch,
    BoundInversion,
    ProbabilityMass,
    HorizonMismatch,
    NonFinite,
    InitialStateOutOfBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    /// Where the defect was found, e.g. `unit 1 (hydro1) state bounds t=0`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state {state:?} at t={t} lies outside the grid hull (axis {axis})")]
    OffGrid {
        t: usize,
        axis: usize,
        state: Vec<f64>,
    },

    #[error("joint state dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("problem is infeasible from the initial state (value is +inf)")]
    InfeasibleStart,

    #[error("no admissible control at t={t} for state {state:?}")]
    NoAdmissibleControl { t: usize, state: Vec<f64> },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("proportionality hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("scenario tree needs {vars} variables, above the guard of {cap}")]
    TreeTooLarge { vars: usize, cap: usize },

    #[error("primal value undefined: {0}")]
    PrimalUndefined(String),

    #[error("path {path}, unit {unit}: {source}")]
    Simulation {
        path: usize,
        unit: usize,
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

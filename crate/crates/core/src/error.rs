use thiserror::Error;

/// Errors raised by the polytope, extension and flow machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numerically degenerate input: {0}")]
    DegenerateNumerics(String),

    #[error("point lies outside the polytope (worst halfspace slack {slack:e})")]
    PointOutside { slack: f64 },

    #[error("no face of dimension {dim} exists")]
    EmptyStratum { dim: usize },

    #[error("polytope is not simple: {0}")]
    NotSimple(String),

    #[error("polytope is simple; no obstruction exists")]
    IsSimple,

    #[error("chart violation at {point:?}: {reason}")]
    ChartViolation { point: Vec<f64>, reason: String },

    #[error("incompatible family on faces {faces:?}: discrepancy {discrepancy:e} at {point:?}")]
    IncompatibleFamily {
        faces: (usize, usize),
        point: Vec<f64>,
        discrepancy: f64,
    },

    #[error("partition of unity does not cover the polytope (min weight sum {min_sum:e} at {point:?})")]
    CoverFailure { point: Vec<f64>, min_sum: f64 },

    #[error("field is not stratified: normal component {normal:e} on face {face}")]
    NotStratified { face: usize, normal: f64 },

    #[error("extended field failed the stratification check (normal component {normal:e} on face {face})")]
    StratificationFailure { face: usize, normal: f64 },

    #[error("integrator step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error("trajectory left the polytope at t = {t} (violation {violation:e})")]
    ConstraintEscape { t: f64, violation: f64 },

    #[error("diffeomorphisms act on different polytopes")]
    BaseMismatch,

    #[error("field does not vanish on the boundary (sup-norm {sup_norm:e})")]
    NotVanishing { sup_norm: f64 },

    #[error("flow budget exhausted with best residual {best_residual:e}")]
    BudgetExhausted { best_residual: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

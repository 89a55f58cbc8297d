use thiserror::Error;

use crate::rules::{RuleKind, RuleOutcome};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("discretization level {n} out of range 1..={n_max}")]
    LevelOutOfRange { n: usize, n_max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("subgradient check failed: sup norm {sup_norm} exceeds 1")]
    InvalidSubgradient { sup_norm: f64 },

    #[error("kernel condition fails at level {n}: constraint matrix has rank {rank}")]
    RankDeficient { n: usize, rank: usize },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit {limit} reached")]
    IterationLimit { limit: usize },

    #[error("size limit exceeded: {0}")]
    SizeLimitExceeded(String),

    #[error("constraint polytope at level {n} is unbounded")]
    UnboundedPolytope { n: usize },

    #[error("no admissible level: {0}")]
    EmptySelection(String),

    #[error("{rule} rule did not trigger up to the maximal level")]
    NotTriggered {
        rule: RuleKind,
        outcome: Box<RuleOutcome>,
    },

    #[error("exact data (f and u_true) required")]
    MissingExactData,

    #[error("numerically singular system: {0}")]
    NumericallySingular(String),

    #[error("level {n} too small for a discrete source element: {reason}")]
    LevelTooSmall { n: usize, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LevelOutOfRange { .. } => "level_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::InvalidSubgradient { .. } => "invalid_subgradient",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Infeasible => "infeasible",
            Error::Unbounded => "unbounded",
            Error::IterationLimit { .. } => "iteration_limit",
            Error::SizeLimitExceeded(_) => "size_limit_exceeded",
            Error::UnboundedPolytope { .. } => "unbounded_polytope",
            Error::EmptySelection(_) => "empty_selection",
            Error::NotTriggered { .. } => "not_triggered",
            Error::MissingExactData => "missing_exact_data",
            Error::NumericallySingular(_) => "numerically_singular",
            Error::LevelTooSmall { .. } => "level_too_small",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

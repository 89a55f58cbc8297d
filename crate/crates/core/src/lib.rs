//! Sparse reconstruction in `l1` by the least error method: minimize
//! `||u||_1` subject to the data equations projected onto a finite subspace
//! `H_n`, with the discretization level `n` acting as the regularization
//! parameter.
//!
//! The forward map is a dense matrix `astar` whose columns are the atoms
//! `a_i = A* e_i`; `A z = astar^T z`.

pub mod error;
pub mod harness;
pub mod kappa;
pub mod l1solver;
pub mod lp;
pub mod model;
pub mod polytope;
pub mod problems;
pub mod rules;
pub mod source;

pub use error::{Error, Result};
pub use kappa::{KappaEstimate, KappaMethod};
pub use l1solver::{brute_force_solve, solve_least_error, verify_certificate, LpDiagnostics};
pub use model::{
    read_problem, write_problem, DiscretizationFamily, ProblemInstance, ReconstructionResult, SourceCertificate,
};
pub use rules::{RuleKind, RuleOutcome, TraceRecord};

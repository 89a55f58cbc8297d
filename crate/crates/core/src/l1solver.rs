//! The least error problem at level `n`:
//!
//! ```text
//! minimize ||u||_1  subject to  <col_j, A* u> = <col_j, rhs>,  j = 1..n.
//! ```
//!
//! Written as a standard-form LP in `u = u+ - u-` with constraint rows
//! `[T, -T]`, `T = basis_n^T astar`. The equality multipliers `p` of an optimal
//! basis give the source element `v = sum_j p_j col_j`, and `A v = T^T p` is a
//! subgradient of `||.||_1` at the minimizer.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lp::{self, SimplexOptions};
use crate::model::{
    check_kernel_condition, l1_norm, support_of, DiscretizationFamily, ProblemInstance,
    ReconstructionResult,
};
use crate::polytope::maximize_over_vertices;

/// Primal feasibility bound for solver output.
pub const PRIMAL_FEAS_TOL: f64 = 1e-8;
/// Dual feasibility and complementarity bound for solver output.
pub const DUAL_FEAS_TOL: f64 = 1e-7;

const BRUTE_FORCE_MAX_ATOMS: usize = 12;
const BRUTE_FORCE_MAX_LEVEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LpDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    /// `||P_n (A* u - rhs)||_2`.
    pub primal_feas: f64,
    /// `max(||xi||_inf - 1, 0)`.
    pub dual_feas: f64,
    /// `sum_i max(0, |u_i| (1 - xi_i sign u_i))`.
    pub complementarity: f64,
}

impl LpDiagnostics {
    pub fn within_bounds(&self) -> bool {
        self.primal_feas <= PRIMAL_FEAS_TOL
            && self.dual_feas <= DUAL_FEAS_TOL
            && self.complementarity <= DUAL_FEAS_TOL * (1.0 + self.objective)
    }
}

fn assemble(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    rhs: &DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    iterations: usize,
) -> Result<ReconstructionResult> {
    let v_h = fam.synthesize(&v)?;
    let xi = inst.astar().tr_mul(&v_h);
    let residual = (inst.astar() * &u - rhs).norm();
    let mut result = ReconstructionResult {
        n,
        l1_norm: l1_norm(&u),
        support: support_of(&u),
        residual,
        u,
        v,
        xi,
        diagnostics: LpDiagnostics::default(),
    };
    let mut diag = verify_certificate(inst, fam, rhs, &result)?;
    diag.iterations = iterations;
    result.diagnostics = diag;
    Ok(result)
}

/// Minimizes `||u||_1` under the level-`n` data constraints and returns the
/// basic optimum selected by Bland's rule together with its source element.
///
/// When the optimal face is not a single point, only the objective value and
/// the certificate property are canonical; the particular vertex is the one the
/// fixed pivot rule reaches.
pub fn solve_least_error(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    rhs: &DVector<f64>,
) -> Result<ReconstructionResult> {
    check_len("rhs", inst.m(), rhs.len())?;
    let t = check_kernel_condition(inst, fam, n)?;
    let atoms = inst.n_atoms();
    let b = fam.coefficients(n, rhs)?;

    let mut mat = DMatrix::zeros(n, 2 * atoms);
    mat.columns_mut(0, atoms).copy_from(&t);
    mat.columns_mut(atoms, atoms).copy_from(&(-&t));
    let cost = DVector::from_element(2 * atoms, 1.0);
    let opts = SimplexOptions {
        optimality_tol: 1e-9,
        feasibility_tol: 1e-10,
        max_iterations: 50 * (atoms + n),
    };
    let sol = match lp::solve(&mat, &b, &cost, &opts) {
        Ok(sol) => sol,
        Err(Error::Infeasible) | Err(Error::Unbounded) => {
            return Err(Error::InvariantViolation(format!(
                "least error LP at level {n} reported infeasible/unbounded despite full rank"
            )))
        }
        Err(e) => return Err(e),
    };
    let u = DVector::from_fn(atoms, |i, _| sol.x[i] - sol.x[atoms + i]);
    assemble(inst, fam, n, rhs, u, sol.duals, sol.iterations)
}

/// Solutions for levels `1..=n_max` with the same right-hand side.
pub fn solve_levels(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n_max: usize,
    rhs: &DVector<f64>,
) -> Result<Vec<ReconstructionResult>> {
    (1..=n_max)
        .map(|n| solve_least_error(inst, fam, n, rhs))
        .collect()
}

/// Recomputes feasibility, dual feasibility and complementary slackness of a
/// result from scratch; `xi` is rebuilt from the stored coefficients `v`.
pub fn verify_certificate(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    rhs: &DVector<f64>,
    result: &ReconstructionResult,
) -> Result<LpDiagnostics> {
    check_len("rhs", inst.m(), rhs.len())?;
    check_len("u", inst.n_atoms(), result.u.len())?;
    check_len("v", result.n, result.v.len())?;
    let n = result.n;
    let gap = inst.astar() * &result.u - rhs;
    let primal_feas = fam.coefficients(n, &gap)?.norm();
    let xi = inst.astar().tr_mul(&fam.synthesize(&result.v)?);
    let dual_feas = (crate::model::sup_norm(&xi) - 1.0).max(0.0);
    let complementarity = result
        .u
        .iter()
        .zip(xi.iter())
        .map(|(ui, xii)| {
            if *ui == 0.0 {
                0.0
            } else {
                (ui.abs() * (1.0 - xii * ui.signum())).max(0.0)
            }
        })
        .sum();
    Ok(LpDiagnostics {
        iterations: result.diagnostics.iterations,
        objective: l1_norm(&result.u),
        primal_feas,
        dual_feas,
        complementarity,
    })
}

/// Exhaustive oracle for small problems.
///
/// The primal minimum is taken over all supports of size at most `n` with
/// linearly independent constraint columns (some optimal solution is always of
/// this form). The source element is the vertex of the dual polytope
/// `{p : |T^T p|_inf <= 1}` maximizing `<p, b>`. Neither step uses the simplex
/// code.
pub fn brute_force_solve(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    rhs: &DVector<f64>,
) -> Result<ReconstructionResult> {
    let atoms = inst.n_atoms();
    if atoms > BRUTE_FORCE_MAX_ATOMS || n > BRUTE_FORCE_MAX_LEVEL {
        return Err(Error::SizeLimitExceeded(format!(
            "brute force needs N <= {BRUTE_FORCE_MAX_ATOMS} and n <= {BRUTE_FORCE_MAX_LEVEL}, got N = {atoms}, n = {n}"
        )));
    }
    check_len("rhs", inst.m(), rhs.len())?;
    let t = check_kernel_condition(inst, fam, n)?;
    let b = fam.coefficients(n, rhs)?;
    let feas_cut = 1e-9 * (1.0 + b.norm());

    let mut best: Option<(f64, DVector<f64>)> = None;
    for size in 0..=n.min(atoms) {
        for subset in (0..atoms).combinations(size) {
            let coeffs = if size == 0 {
                DVector::zeros(0)
            } else {
                let sub = DMatrix::from_fn(n, size, |r, c| t[(r, subset[c])]);
                if crate::model::numerical_rank(&sub, 1e-10) < size {
                    continue;
                }
                match sub.clone().svd(true, true).solve(&b, 1e-14) {
                    Ok(x) if (&sub * &x - &b).norm() <= feas_cut => x,
                    _ => continue,
                }
            };
            if size == 0 && b.norm() > feas_cut {
                continue;
            }
            let value: f64 = coeffs.iter().map(|x| x.abs()).sum();
            if best.as_ref().is_none_or(|(bv, _)| value < *bv - 1e-14) {
                let mut u = DVector::zeros(atoms);
                for (k, &i) in subset.iter().enumerate() {
                    u[i] = coeffs[k];
                }
                best = Some((value, u));
            }
        }
    }
    let (_, u) = best.ok_or(Error::Infeasible)?;

    let dual = maximize_over_vertices(&t.transpose(), |p| p.dot(&b))?
        .ok_or(Error::UnboundedPolytope { n })?;
    assemble(inst, fam, n, rhs, u, dual.vertex, 0)
}

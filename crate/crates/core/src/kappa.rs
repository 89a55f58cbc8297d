//! Stability constant `kappa_n = sup_{z in H_n} ||z|| / ||A z||_inf`.
//!
//! In basis coordinates `z = basis_n c` the constant is the largest Euclidean
//! norm over the polytope `{c : |T^T c|_inf <= 1}`. Maximizing a convex function
//! over a polytope is attained at a vertex, so small levels are solved exactly
//! by enumeration; larger levels get a feasible-point lower bound.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, SimplexOptions};
use crate::model::{constraint_matrix, numerical_rank, DiscretizationFamily, ProblemInstance, BASIS_TOL};
use crate::polytope::maximize_over_vertices;

/// Largest level handled by exact vertex enumeration.
pub const MAX_ENUM_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMethod {
    VertexEnum,
    DiagonalClosedForm,
    MultistartLowerBound,
}

impl KappaMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            KappaMethod::VertexEnum => "vertex_enum",
            KappaMethod::DiagonalClosedForm => "diagonal_closed_form",
            KappaMethod::MultistartLowerBound => "multistart_lower_bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub n: usize,
    pub value: f64,
    pub method: KappaMethod,
    /// True iff `value` is exact up to round-off.
    pub certified: bool,
}

/// Polytope rows `w_i = (A col_j)_{j <= n}` after checking boundedness.
fn polytope_rows(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize) -> Result<DMatrix<f64>> {
    let t = constraint_matrix(inst, fam, n)?;
    if numerical_rank(&t, BASIS_TOL) < n {
        return Err(Error::UnboundedPolytope { n });
    }
    Ok(t.transpose())
}

pub fn kappa_vertex_enum(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize) -> Result<KappaEstimate> {
    if n > MAX_ENUM_LEVEL {
        return Err(Error::SizeLimitExceeded(format!(
            "vertex enumeration supports n <= {MAX_ENUM_LEVEL}, got {n}"
        )));
    }
    let w = polytope_rows(inst, fam, n)?;
    let best = maximize_over_vertices(&w, |c| c.norm())?.ok_or(Error::UnboundedPolytope { n })?;
    Ok(KappaEstimate {
        n,
        value: best.score,
        method: KappaMethod::VertexEnum,
        certified: true,
    })
}

/// Closed form `sqrt(sum_{i <= n} sigma_i^-2)` for `(Az)_i = sigma_i <z, v_i>`.
pub fn kappa_diagonal(sigmas: &[f64], n: usize) -> Result<KappaEstimate> {
    if n == 0 || n > sigmas.len() {
        return Err(Error::LevelOutOfRange {
            n,
            n_max: sigmas.len(),
        });
    }
    if let Some(bad) = sigmas[..n].iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("singular value {bad} is not positive")));
    }
    let value = sigmas[..n].iter().map(|s| s.powi(-2)).sum::<f64>().sqrt();
    Ok(KappaEstimate {
        n,
        value,
        method: KappaMethod::DiagonalClosedForm,
        certified: true,
    })
}

/// `argmax_{|W c|_inf <= 1} <g, c>` via the LP in split variables with slacks.
fn linear_max(w: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, dim) = w.shape();
    let cols = 2 * dim + 2 * rows;
    let mut mat = DMatrix::zeros(2 * rows, cols);
    for i in 0..rows {
        for k in 0..dim {
            mat[(i, k)] = w[(i, k)];
            mat[(i, dim + k)] = -w[(i, k)];
            mat[(rows + i, k)] = -w[(i, k)];
            mat[(rows + i, dim + k)] = w[(i, k)];
        }
        mat[(i, 2 * dim + i)] = 1.0;
        mat[(rows + i, 2 * dim + rows + i)] = 1.0;
    }
    let b = DVector::from_element(2 * rows, 1.0);
    let mut cost = DVector::zeros(cols);
    for k in 0..dim {
        cost[k] = -g[k];
        cost[dim + k] = g[k];
    }
    let opts = SimplexOptions {
        max_iterations: 50 * (cols + 2 * rows),
        ..Default::default()
    };
    let sol = lp::solve(&mat, &b, &cost, &opts)?;
    Ok(DVector::from_fn(dim, |k, _| sol.x[k] - sol.x[dim + k]))
}

/// Multistart ascent of `||c||^2` over the polytope.
///
/// Each restart draws a random direction, moves to the boundary, and then
/// repeatedly replaces `c` by the vertex maximizing the linearization `<c, .>`,
/// which never decreases the convex objective. The final point is rescaled to
/// be exactly feasible, so the reported value never exceeds the true constant.
pub fn kappa_lower_bound(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    restarts: usize,
    seed: u64,
) -> Result<KappaEstimate> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let w = polytope_rows(inst, fam, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feasible_scale = |c: &DVector<f64>| {
        let s = (&w * c).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if s > 0.0 {
            c / s
        } else {
            c.clone()
        }
    };

    let mut best = 0.0f64;
    for _ in 0..restarts {
        let dir = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let mut c = feasible_scale(&dir);
        for _ in 0..100 {
            let next = feasible_scale(&linear_max(&w, &c)?);
            if next.norm_squared() <= c.norm_squared() * (1.0 + 1e-12) {
                break;
            }
            c = next;
        }
        best = best.max(c.norm());
    }
    Ok(KappaEstimate {
        n,
        value: best,
        method: KappaMethod::MultistartLowerBound,
        certified: false,
    })
}

/// `kappa_1, ..., kappa_{n_max}`: exact up to [`MAX_ENUM_LEVEL`] when the
/// enumeration fits, lower bounds beyond.
pub fn kappa_profile(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n_max: usize,
    seed: u64,
) -> Result<Vec<KappaEstimate>> {
    fam.check_level(n_max)?;
    (1..=n_max)
        .map(|n| match kappa_vertex_enum(inst, fam, n) {
            Err(Error::SizeLimitExceeded(_)) => kappa_lower_bound(inst, fam, n, 20, seed.wrapping_add(n as u64)),
            other => other,
        })
        .collect()
}

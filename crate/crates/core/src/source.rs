//! Source elements: existence check, strict source elements with positive
//! margin, their discrete counterparts in `H_n`, and extremal atoms of the
//! projected dictionary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::l1solver::solve_least_error;
use crate::lp::{self, SimplexOptions};
use crate::model::{
    constraint_matrix, exact_support, l1_norm, DiscretizationFamily, ProblemInstance, SourceCertificate,
};

/// Equality tolerance for `(Av)_i = sign(u_i)` on the support.
pub const SIGN_TOL: f64 = 1e-9;
/// Gram matrices count as invertible when `s_min >= GRAM_TOL * s_max`.
pub const GRAM_TOL: f64 = 1e-8;
/// Largest level for the extremal index computation.
pub const MAX_EXTREMAL_LEVEL: usize = 6;
/// Reconstruction accuracy required of exact-data solves in [`empirical_n0`].
pub const RECOVERY_TOL: f64 = 1e-7;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `eps_v = 1 - max_{i not in support} |(Av)_i|`, and 1 when every index is in the support.
pub fn margin(inst: &ProblemInstance, v: &DVector<f64>, support: &[usize]) -> Result<f64> {
    check_len("v", inst.m(), v.len())?;
    let av = inst.astar().tr_mul(v);
    let mut in_support = vec![false; inst.n_atoms()];
    for &i in support {
        if i >= inst.n_atoms() {
            return Err(Error::InvalidArgument(format!("support index {i} out of range")));
        }
        in_support[i] = true;
    }
    let worst = av
        .iter()
        .zip(&in_support)
        .filter(|(_, s)| !**s)
        .fold(0.0f64, |a, (x, _)| a.max(x.abs()));
    Ok(1.0 - worst)
}

/// Rows `a_i^T`, `i in idx`.
fn atom_rows(inst: &ProblemInstance, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), inst.m(), |r, c| inst.astar()[(c, idx[r])])
}

/// Cholesky factor of a Gram matrix after the relative singular value test.
fn invert_gram(gram: DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if gram.nrows() == 0 {
        return DMatrix::<f64>::zeros(0, 0).cholesky().map(|c| (c, f64::INFINITY));
    }
    let sv = gram.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(hi > 0.0) || lo < GRAM_TOL * hi {
        return None;
    }
    gram.cholesky().map(|c| (c, lo))
}

/// Minimum-norm correction `v + R^T (R R^T)^+ (target - R v)` that restores the
/// support equalities exactly after an LP solve.
fn polish(rows: &DMatrix<f64>, v: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    if rows.nrows() == 0 {
        return v.clone();
    }
    let gap = target - rows * v;
    let gram = rows * rows.transpose();
    match gram.svd(true, true).solve(&gap, 1e-12) {
        Ok(c) => v + rows.tr_mul(&c),
        Err(_) => v.clone(),
    }
}

fn check_sign_pattern(inst: &ProblemInstance, v: &DVector<f64>, u_true: &DVector<f64>) -> bool {
    let av = inst.astar().tr_mul(v);
    exact_support(u_true)
        .into_iter()
        .all(|i| (av[i] - sign(u_true[i])).abs() <= SIGN_TOL)
}

/// Finds `v` with `(Av)_i = sign(u_i)` on the support and `|(Av)_i| <= 1`
/// elsewhere, maximizing the off-support margin. `None` when no such `v` exists.
pub fn check_source_condition(inst: &ProblemInstance, u_true: &DVector<f64>) -> Result<Option<SourceCertificate>> {
    check_len("u_true", inst.n_atoms(), u_true.len())?;
    let m = inst.m();
    let support = exact_support(u_true);
    let off: Vec<usize> = (0..inst.n_atoms()).filter(|i| u_true[*i] == 0.0).collect();
    let a_s = atom_rows(inst, &support);
    let a_o = atom_rows(inst, &off);
    let (ns, no) = (support.len(), off.len());

    // Variables: v+ (m), v- (m), t' = t + 1 (1), slacks (2 no), slack of t' <= 2 (1).
    let cols = 2 * m + 1 + 2 * no + 1;
    let rows = ns + 2 * no + 1;
    let tcol = 2 * m;
    let mut mat = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for r in 0..ns {
        for k in 0..m {
            mat[(r, k)] = a_s[(r, k)];
            mat[(r, m + k)] = -a_s[(r, k)];
        }
        b[r] = sign(u_true[support[r]]);
    }
    for r in 0..no {
        for (row, s) in [(ns + r, 1.0), (ns + no + r, -1.0)] {
            for k in 0..m {
                mat[(row, k)] = s * a_o[(r, k)];
                mat[(row, m + k)] = -s * a_o[(r, k)];
            }
            mat[(row, tcol)] = 1.0;
            b[row] = 2.0;
        }
        mat[(ns + r, tcol + 1 + r)] = 1.0;
        mat[(ns + no + r, tcol + 1 + no + r)] = 1.0;
    }
    mat[(rows - 1, tcol)] = 1.0;
    mat[(rows - 1, cols - 1)] = 1.0;
    b[rows - 1] = 2.0;
    let mut cost = DVector::zeros(cols);
    cost[tcol] = -1.0;
    let opts = SimplexOptions {
        max_iterations: 50 * (cols + rows),
        ..Default::default()
    };
    let sol = match lp::solve(&mat, &b, &cost, &opts) {
        Ok(sol) => sol,
        Err(Error::Infeasible) => return Ok(None),
        Err(e) => return Err(e),
    };
    let v = DVector::from_fn(m, |k, _| sol.x[k] - sol.x[m + k]);
    let target = DVector::from_fn(ns, |r, _| sign(u_true[support[r]]));
    let v = polish(&a_s, &v, &target);
    if !check_sign_pattern(inst, &v, u_true) {
        return Ok(None);
    }
    let eps = margin(inst, &v, &support)?;
    if eps < -SIGN_TOL {
        return Ok(None);
    }
    Ok(Some(SourceCertificate { v, support, margin: eps }))
}

fn validate_certificate(inst: &ProblemInstance, u_true: &DVector<f64>, cert: &SourceCertificate) -> Result<()> {
    check_len("u_true", inst.n_atoms(), u_true.len())?;
    check_len("certificate v", inst.m(), cert.v.len())?;
    if cert.support != exact_support(u_true) {
        return Err(Error::InvalidArgument(
            "certificate support differs from the support of u_true".into(),
        ));
    }
    if !check_sign_pattern(inst, &cert.v, u_true) {
        return Err(Error::InvalidArgument(
            "certificate does not match the sign pattern of u_true".into(),
        ));
    }
    if margin(inst, &cert.v, &cert.support)? < -SIGN_TOL {
        return Err(Error::InvalidArgument("certificate violates |Av|_inf <= 1".into()));
    }
    Ok(())
}

/// Corrects a source element so that `|(Av)_i| = 1` exactly on the support.
///
/// Off-support indices where `|(Av)_i|` reaches 1 are pushed to `1 - eps` by
/// adding the element of `span{a_i : i active}` with prescribed values on the
/// active set, where `eps = (1/2) min(1, rho / (2 C ||A||))`, `C` bounds the
/// inverse Gram matrix and `rho` is the margin outside the active set.
pub fn strictify_source(
    inst: &ProblemInstance,
    u_true: &DVector<f64>,
    cert: &SourceCertificate,
) -> Result<SourceCertificate> {
    validate_certificate(inst, u_true, cert)?;
    let av = inst.astar().tr_mul(&cert.v);
    let active: Vec<usize> = (0..inst.n_atoms())
        .filter(|&i| av[i].abs() >= 1.0 - SIGN_TOL)
        .collect();
    let zero_active: Vec<usize> = active.iter().copied().filter(|&i| u_true[i] == 0.0).collect();
    if zero_active.is_empty() {
        return Ok(cert.clone());
    }

    let a_i = atom_rows(inst, &active);
    let (chol, lambda_min) = invert_gram(&a_i * a_i.transpose()).ok_or_else(|| {
        Error::NumericallySingular(format!("Gram matrix of {} active atoms", active.len()))
    })?;
    let c_bound = (active.len() as f64 / lambda_min).sqrt();
    let rho = 1.0
        - (0..inst.n_atoms())
            .filter(|i| !active.contains(i))
            .fold(0.0f64, |a, i| a.max(av[i].abs()));
    let eps = 0.5 * 1f64.min(0.5 * rho / (c_bound * inst.operator_norm()));

    let vbar = DVector::from_fn(active.len(), |r, _| {
        let i = active[r];
        if u_true[i] == 0.0 {
            -eps * sign(av[i])
        } else {
            0.0
        }
    });
    let v = &cert.v + a_i.tr_mul(&chol.solve(&vbar));
    let support = cert.support.clone();
    let target = DVector::from_fn(support.len(), |r, _| sign(u_true[support[r]]));
    let v = polish(&atom_rows(inst, &support), &v, &target);
    let eps_v = margin(inst, &v, &support)?;
    if !(eps_v > 0.0) || !check_sign_pattern(inst, &v, u_true) {
        return Err(Error::InvariantViolation(format!(
            "strict source element has margin {eps_v}"
        )));
    }
    Ok(SourceCertificate { v, support, margin: eps_v })
}

/// A source element of the level-`n` problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSource {
    pub n: usize,
    /// Coefficients of `v` in the level-`n` basis.
    #[serde(with = "crate::model::dvec_serde")]
    pub coefficients: DVector<f64>,
    /// The same element in `H`.
    pub certificate: SourceCertificate,
}

/// `v^{n} = P_n v + w` with `w in P_n span{a_i : i in I}` restoring
/// `<v^n, a_i> = <v, a_i>` on `I = supp u`.
///
/// Accepted only when the projected Gram matrix is invertible, the sign
/// pattern holds to [`SIGN_TOL`] and the margin is at least half the margin of
/// `cert_strict`.
pub fn discrete_source_element(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    u_true: &DVector<f64>,
    cert_strict: &SourceCertificate,
) -> Result<DiscreteSource> {
    validate_certificate(inst, u_true, cert_strict)?;
    if !(cert_strict.margin > 0.0) {
        return Err(Error::InvalidArgument("certificate is not strict".into()));
    }
    let support = &cert_strict.support;
    if support.len() > n {
        return Err(Error::LevelTooSmall {
            n,
            reason: format!("support size {} exceeds level", support.len()),
        });
    }
    let t = constraint_matrix(inst, fam, n)?;
    let t_s = DMatrix::from_fn(n, support.len(), |r, c| t[(r, support[c])]);
    let (chol, _) = invert_gram(t_s.tr_mul(&t_s)).ok_or_else(|| Error::LevelTooSmall {
        n,
        reason: "projected Gram matrix of the support atoms is not invertible".into(),
    })?;
    let base = fam.coefficients(n, &cert_strict.v)?;
    let tail = &cert_strict.v - fam.synthesize(&base)?;
    let r = DVector::from_fn(support.len(), |k, _| inst.astar().column(support[k]).dot(&tail));
    let coefficients = base + &t_s * chol.solve(&r);
    let v = fam.synthesize(&coefficients)?;

    if !check_sign_pattern(inst, &v, u_true) {
        return Err(Error::LevelTooSmall {
            n,
            reason: "sign pattern not reproduced".into(),
        });
    }
    let eps = margin(inst, &v, support)?;
    if eps < 0.5 * cert_strict.margin - 1e-9 {
        return Err(Error::LevelTooSmall {
            n,
            reason: format!("margin {eps} below half of {}", cert_strict.margin),
        });
    }
    Ok(DiscreteSource {
        n,
        coefficients,
        certificate: SourceCertificate {
            v,
            support: support.clone(),
            margin: eps,
        },
    })
}

fn level_ok(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    u_true: &DVector<f64>,
    f: &DVector<f64>,
    cert_strict: &SourceCertificate,
) -> Result<bool> {
    match discrete_source_element(inst, fam, n, u_true, cert_strict) {
        Ok(_) => {}
        Err(Error::LevelTooSmall { .. }) => return Ok(false),
        Err(e) => return Err(e),
    }
    match solve_least_error(inst, fam, n, f) {
        Ok(sol) => Ok(l1_norm(&(&sol.u - u_true)) <= RECOVERY_TOL),
        Err(Error::RankDeficient { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Smallest `n <= n_max` such that every level in `n..=n_max` admits a
/// discrete source element and recovers `u_true` from exact data.
pub fn empirical_n0(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    cert_strict: &SourceCertificate,
    n_max: usize,
) -> Result<Option<usize>> {
    let (Some(f), Some(u_true)) = (inst.f(), inst.u_true()) else {
        return Err(Error::MissingExactData);
    };
    fam.check_level(n_max)?;
    let mut n0 = None;
    for n in (1..=n_max).rev() {
        if level_ok(inst, fam, n, u_true, f, cert_strict)? {
            n0 = Some(n);
        } else {
            break;
        }
    }
    Ok(n0)
}

/// Indices `i` whose projected atom `P_n a_i` is a vertex of
/// `K_n = conv{+-P_n a_j}`.
///
/// Vertex test: `P_n a_i` is not a convex combination of the remaining
/// symmetrized atoms, with exact copies of `P_n a_i` left out of the pool.
pub fn extremal_index_set(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize) -> Result<Vec<usize>> {
    if n > MAX_EXTREMAL_LEVEL {
        return Err(Error::SizeLimitExceeded(format!(
            "extremal index set supports n <= {MAX_EXTREMAL_LEVEL}, got {n}"
        )));
    }
    let t = constraint_matrix(inst, fam, n)?;
    let atoms = t.ncols();
    let scale = t.column_iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let same_tol = 1e-12 * scale;
    let opts = SimplexOptions {
        max_iterations: 50 * (2 * atoms + n + 1),
        ..Default::default()
    };
    let mut out = Vec::new();
    for i in 0..atoms {
        let p = t.column(i).into_owned();
        if p.norm() <= same_tol {
            continue;
        }
        let pool: Vec<DVector<f64>> = (0..atoms)
            .flat_map(|j| [t.column(j).into_owned(), -t.column(j).into_owned()])
            .filter(|q| (q - &p).norm() > same_tol)
            .collect();
        let mut mat = DMatrix::zeros(n + 1, pool.len());
        for (k, q) in pool.iter().enumerate() {
            mat.view_mut((0, k), (n, 1)).copy_from(q);
            mat[(n, k)] = 1.0;
        }
        let mut b = DVector::zeros(n + 1);
        b.rows_mut(0, n).copy_from(&p);
        b[n] = 1.0;
        match lp::find_feasible(&mat, &b, &opts) {
            Ok(_) => {}
            Err(Error::Infeasible) => out.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

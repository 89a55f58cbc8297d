//! Problem data, discretization families, and the l1 geometry shared by every
//! other module.
//!
//! The Hilbert space `H` is truncated to `R^m` with the Euclidean inner product
//! and the sequence space `l1` to `R^N`. The operator `A*: l1 -> H` is stored as
//! the dense `m x N` matrix `astar` whose columns `a_i = A* e_i` are the atoms;
//! the forward map `A: H -> c0` is its transpose, `(Az)_i = <a_i, z>`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// An entry `u_i` is part of the support iff `|u_i| > SUPPORT_TOL * (1 + ||u||_1)`.
pub const SUPPORT_TOL: f64 = 1e-9;
/// Tolerance used by every certificate (subgradient) check.
pub const SUBGRADIENT_TOL: f64 = 1e-7;
/// Tolerance for orthonormality of a basis and for the kernel rank test.
pub const BASIS_TOL: f64 = 1e-10;

pub mod dvec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}

pub fn l1_norm(u: &DVector<f64>) -> f64 {
    u.iter().map(|x| x.abs()).sum()
}

pub fn sup_norm(u: &DVector<f64>) -> f64 {
    u.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Indices of the entries counted as nonzero under [`SUPPORT_TOL`].
pub fn support_of(u: &DVector<f64>) -> Vec<usize> {
    let cut = SUPPORT_TOL * (1.0 + l1_norm(u));
    u.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > cut)
        .map(|(i, _)| i)
        .collect()
}

/// Exact-sign support: indices with `u_i != 0`, used for ground truth vectors.
pub fn exact_support(u: &DVector<f64>) -> Vec<usize> {
    u.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Finite truncation of `A* u = f` with noisy data `f_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    astar: DMatrix<f64>,
    f: Option<DVector<f64>>,
    f_delta: DVector<f64>,
    delta: f64,
    u_true: Option<DVector<f64>>,
}

impl ProblemInstance {
    pub fn new(
        astar: DMatrix<f64>,
        f: Option<DVector<f64>>,
        f_delta: DVector<f64>,
        delta: f64,
        u_true: Option<DVector<f64>>,
    ) -> Result<Self> {
        let (m, n_cols) = astar.shape();
        if m == 0 || n_cols == 0 {
            return Err(Error::InvalidArgument("astar must be non-empty".into()));
        }
        if !astar.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("astar has non-finite entries".into()));
        }
        check_len("f_delta", m, f_delta.len())?;
        if let Some(f) = &f {
            check_len("f", m, f.len())?;
        }
        if let Some(u) = &u_true {
            check_len("u_true", n_cols, u.len())?;
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
        }
        for (i, col) in astar.column_iter().enumerate() {
            if col.iter().all(|x| *x == 0.0) {
                return Err(Error::InvariantViolation(format!("column {i} of astar is zero")));
            }
        }
        if let (Some(f), Some(u)) = (&f, &u_true) {
            let gap = (&astar * u - f).norm();
            if gap > 1e-10 * (1.0 + f.norm()) {
                return Err(Error::InvariantViolation(format!(
                    "astar * u_true differs from f by {gap:e}"
                )));
            }
        }
        if let Some(f) = &f {
            let noise = (&f_delta - f).norm();
            if noise > delta * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::InvariantViolation(format!(
                    "||f_delta - f|| = {noise:e} exceeds delta = {delta:e}"
                )));
            }
        }
        Ok(Self {
            astar,
            f,
            f_delta,
            delta,
            u_true,
        })
    }

    /// Instance with exact data: `f_delta = f = astar * u_true`, `delta = 0`.
    pub fn from_truth(astar: DMatrix<f64>, u_true: DVector<f64>) -> Result<Self> {
        check_len("u_true", astar.ncols(), u_true.len())?;
        let f = &astar * &u_true;
        Self::new(astar, Some(f.clone()), f, 0.0, Some(u_true))
    }

    /// Same operator and ground truth, different observed data.
    pub fn with_noisy_data(&self, f_delta: DVector<f64>, delta: f64) -> Result<Self> {
        Self::new(
            self.astar.clone(),
            self.f.clone(),
            f_delta,
            delta,
            self.u_true.clone(),
        )
    }

    pub fn m(&self) -> usize {
        self.astar.nrows()
    }

    /// Ambient dimension of the truncated l1 space.
    pub fn n_atoms(&self) -> usize {
        self.astar.ncols()
    }

    pub fn astar(&self) -> &DMatrix<f64> {
        &self.astar
    }

    pub fn f(&self) -> Option<&DVector<f64>> {
        self.f.as_ref()
    }

    pub fn f_delta(&self) -> &DVector<f64> {
        &self.f_delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn u_true(&self) -> Option<&DVector<f64>> {
        self.u_true.as_ref()
    }

    /// `||A||` as an operator `H -> c0`, equal to `||A*||` from `l1` into `H`:
    /// the largest atom norm.
    pub fn operator_norm(&self) -> f64 {
        self.astar
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

/// `(Az)_i = <a_i, z>`.
pub fn apply_forward(inst: &ProblemInstance, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("z", inst.m(), z.len())?;
    Ok(inst.astar.tr_mul(z))
}

/// `A* u = sum_i u_i a_i`.
pub fn apply_adjoint(inst: &ProblemInstance, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("u", inst.n_atoms(), u.len())?;
    Ok(&inst.astar * u)
}

/// Nested subspaces `H_1 ⊂ H_2 ⊂ ...` spanned by prefixes of an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationFamily {
    basis: DMatrix<f64>,
}

impl DiscretizationFamily {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let (m, n_max) = basis.shape();
        if n_max == 0 || n_max > m {
            return Err(Error::InvalidArgument(format!(
                "basis must have 1..={m} columns, got {n_max}"
            )));
        }
        let gram = basis.tr_mul(&basis);
        for j in 0..n_max {
            for k in 0..n_max {
                let target = if j == k { 1.0 } else { 0.0 };
                if (gram[(j, k)] - target).abs() > BASIS_TOL {
                    return Err(Error::InvariantViolation(format!(
                        "basis columns {j},{k} not orthonormal (gram entry {})",
                        gram[(j, k)]
                    )));
                }
            }
        }
        Ok(Self { basis })
    }

    /// Canonical basis `e_1, ..., e_{n_max}` of `R^m`.
    pub fn canonical(m: usize, n_max: usize) -> Result<Self> {
        let mut basis = DMatrix::zeros(m, n_max);
        for j in 0..n_max.min(m) {
            basis[(j, j)] = 1.0;
        }
        Self::new(basis)
    }

    pub fn m(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_max(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn check_level(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_max() {
            return Err(Error::LevelOutOfRange {
                n,
                n_max: self.n_max(),
            });
        }
        Ok(())
    }

    /// The first `n` basis vectors as an `m x n` matrix.
    pub fn prefix(&self, n: usize) -> Result<DMatrix<f64>> {
        self.check_level(n)?;
        Ok(self.basis.columns(0, n).into_owned())
    }

    /// Coefficients `(<w, col_j>)_{j <= n}`.
    pub fn coefficients(&self, n: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("w", self.m(), w.len())?;
        Ok(self.prefix(n)?.tr_mul(w))
    }

    /// Element of `H` with the given coefficients in the level-`n` basis.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = coeffs.len();
        Ok(self.prefix(n)? * coeffs)
    }
}

/// Orthogonal projection `P_n w`.
pub fn project(fam: &DiscretizationFamily, n: usize, w: &DVector<f64>) -> Result<DVector<f64>> {
    let coeffs = fam.coefficients(n, w)?;
    fam.synthesize(&coeffs)
}

/// Rows `(A col_j)^T` for `j <= n`: the `n x N` matrix of the discretized constraints
/// `<col_j, A* u> = <col_j, rhs>`.
pub fn constraint_matrix(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
) -> Result<DMatrix<f64>> {
    check_len("basis rows", inst.m(), fam.m())?;
    Ok(fam.prefix(n)?.tr_mul(inst.astar()))
}

/// Numerical rank with singular values measured relative to the largest one.
pub fn numerical_rank(mat: &DMatrix<f64>, rel_tol: f64) -> usize {
    if mat.is_empty() {
        return 0;
    }
    let sv = mat.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * top).count()
}

/// Checks `N(A) ∩ H_n = {0}` as full row rank of the constraint matrix.
pub fn check_kernel_condition(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
) -> Result<DMatrix<f64>> {
    let t = constraint_matrix(inst, fam, n)?;
    let rank = numerical_rank(&t, BASIS_TOL);
    if rank < n {
        return Err(Error::RankDeficient { n, rank });
    }
    Ok(t)
}

/// Bregman distance `D(u, v) = ||u||_1 - <xi_v, u>` for a subgradient `xi_v` at `v`.
///
/// `v_norm` (`||v||_1`) does not enter the simplified formula and is accepted so
/// that call sites record which base point the subgradient belongs to.
pub fn bregman(u: &DVector<f64>, _v_norm: f64, xi: &DVector<f64>) -> Result<f64> {
    check_len("xi", u.len(), xi.len())?;
    let s = sup_norm(xi);
    if s > 1.0 + 1e-9 {
        return Err(Error::InvalidSubgradient { sup_norm: s });
    }
    Ok(l1_norm(u) - xi.dot(u))
}

/// `xi ∈ ∂||.||_1(u)` up to `tol`.
pub fn subgradient_membership(u: &DVector<f64>, xi: &DVector<f64>, tol: f64) -> bool {
    if u.len() != xi.len() {
        return false;
    }
    if sup_norm(xi) > 1.0 + tol {
        return false;
    }
    u.iter()
        .zip(xi.iter())
        .all(|(ui, xii)| ui.abs() <= tol || xii * ui.signum() >= 1.0 - tol)
}

/// Symmetric Bregman distance `<xi_u - xi_w, u - w>`.
pub fn bregman_sym(
    u: &DVector<f64>,
    xi_u: &DVector<f64>,
    w: &DVector<f64>,
    xi_w: &DVector<f64>,
) -> Result<f64> {
    check_len("w", u.len(), w.len())?;
    check_len("xi_u", u.len(), xi_u.len())?;
    check_len("xi_w", u.len(), xi_w.len())?;
    for (point, xi) in [(u, xi_u), (w, xi_w)] {
        if !subgradient_membership(point, xi, SUBGRADIENT_TOL) {
            return Err(Error::InvalidSubgradient {
                sup_norm: sup_norm(xi),
            });
        }
    }
    Ok((xi_u - xi_w).dot(&(u - w)))
}

/// Output of the least error solver at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub n: usize,
    #[serde(with = "dvec_serde")]
    pub u: DVector<f64>,
    /// Coefficients of the source element in the level-`n` basis.
    #[serde(with = "dvec_serde")]
    pub v: DVector<f64>,
    /// `xi = A v_H`, a subgradient of `||.||_1` at `u`.
    #[serde(with = "dvec_serde")]
    pub xi: DVector<f64>,
    pub l1_norm: f64,
    /// `||A* u - rhs||_2` for the right-hand side the problem was solved with.
    pub residual: f64,
    pub support: Vec<usize>,
    pub diagnostics: crate::l1solver::LpDiagnostics,
}

impl ReconstructionResult {
    /// The source element as an element of `H`.
    pub fn source_element(&self, fam: &DiscretizationFamily) -> Result<DVector<f64>> {
        fam.synthesize(&self.v)
    }
}

/// Source element `v` with `(Av)_i = sign(u_i)` on `support` and
/// `|(Av)_i| <= 1 - margin` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCertificate {
    #[serde(with = "dvec_serde")]
    pub v: DVector<f64>,
    pub support: Vec<usize>,
    pub margin: f64,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    m: usize,
    #[serde(rename = "N")]
    n_atoms: usize,
    astar: Vec<Vec<f64>>,
    #[serde(default)]
    f: Option<Vec<f64>>,
    f_delta: Vec<f64>,
    delta: f64,
    #[serde(default)]
    u_true: Option<Vec<f64>>,
    basis: Vec<Vec<f64>>,
    n_max: usize,
}

fn rows_of(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    mat.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    check_len(what, nrows, rows.len())?;
    for r in rows {
        check_len(what, ncols, r.len())?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes instance and family as one JSON document.
pub fn write_problem<W: Write>(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    writer: W,
) -> Result<()> {
    let file = ProblemFile {
        m: inst.m(),
        n_atoms: inst.n_atoms(),
        astar: rows_of(inst.astar()),
        f: inst.f().map(|f| f.iter().copied().collect()),
        f_delta: inst.f_delta().iter().copied().collect(),
        delta: inst.delta(),
        u_true: inst.u_true().map(|u| u.iter().copied().collect()),
        basis: rows_of(fam.basis()),
        n_max: fam.n_max(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

pub fn read_problem<R: Read>(reader: R) -> Result<(ProblemInstance, DiscretizationFamily)> {
    let file: ProblemFile = serde_json::from_reader(reader)?;
    let astar = matrix_from_rows(&file.astar, file.m, file.n_atoms, "astar")?;
    let basis = matrix_from_rows(&file.basis, file.m, file.n_max, "basis")?;
    let inst = ProblemInstance::new(
        astar,
        file.f.map(DVector::from_vec),
        DVector::from_vec(file.f_delta),
        file.delta,
        file.u_true.map(DVector::from_vec),
    )?;
    let fam = DiscretizationFamily::new(basis)?;
    Ok((inst, fam))
}

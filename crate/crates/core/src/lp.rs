//! Dense revised simplex for standard-form linear programs
//!
//! ```text
//! minimize c^T x  subject to  M x = b,  x >= 0.
//! ```
//!
//! Phase 1 starts from an all-artificial basis. Pivoting follows Bland's rule
//! (smallest eligible entering index, ties in the ratio test broken by the
//! smallest basic index), so the method terminates and the output is a basic
//! solution that depends only on the input. The basis inverse is kept
//! explicitly, updated by elementary row operations and refactored from an LU
//! decomposition every [`REFACTOR_EVERY`] pivots and before the final answer.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

const REFACTOR_EVERY: usize = 32;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Entering variables need a reduced cost below `-optimality_tol`.
    pub optimality_tol: f64,
    /// Phase 1 succeeds when the artificial sum is below this, relative to `1 + ||b||_1`.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-9,
            feasibility_tol: 1e-9,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    /// Multipliers `y` of the equality rows: reduced costs are `c - M^T y`.
    pub duals: DVector<f64>,
    /// Basic variable per row; indices `>= M.ncols()` are leftover artificials
    /// sitting on redundant rows.
    pub basis: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    /// Constraint matrix with rows flipped so that `rhs >= 0`.
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    /// Row sign flips applied so that `rhs >= 0`.
    flips: Vec<f64>,
    n_orig: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl Tableau {
    fn new(mat: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let rows = mat.nrows();
        let flips: Vec<f64> = b.iter().map(|x| if *x < 0.0 { -1.0 } else { 1.0 }).collect();
        let rhs = DVector::from_fn(rows, |r, _| b[r] * flips[r]);
        let flipped = DMatrix::from_fn(rows, mat.ncols(), |r, j| mat[(r, j)] * flips[r]);
        Self {
            mat: flipped,
            xb: rhs.clone(),
            rhs,
            flips,
            n_orig: mat.ncols(),
            basis: (mat.ncols()..mat.ncols() + rows).collect(),
            binv: DMatrix::identity(rows, rows),
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn rows(&self) -> usize {
        self.mat.nrows()
    }

    /// Column `j` of the row-flipped matrix extended by the artificial identity.
    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n_orig {
            self.mat.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.rows());
            e[j - self.n_orig] = 1.0;
            e
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let mut bm = DMatrix::zeros(self.rows(), self.rows());
        for (k, &j) in self.basis.iter().enumerate() {
            bm.set_column(k, &self.column(j));
        }
        bm
    }

    fn refactor(&mut self) -> Result<()> {
        let bm = self.basis_matrix();
        let lu = bm.lu();
        self.binv = lu
            .try_inverse()
            .ok_or_else(|| Error::NumericallySingular("simplex basis matrix".into()))?;
        self.xb = &self.binv * &self.rhs;
        for x in self.xb.iter_mut() {
            if *x < 0.0 && *x > -1e-11 {
                *x = 0.0;
            }
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self, cost: &dyn Fn(usize) -> f64) -> DVector<f64> {
        let cb = DVector::from_fn(self.rows(), |k, _| cost(self.basis[k]));
        self.binv.tr_mul(&cb)
    }

    fn pivot(&mut self, row: usize, entering: usize, alpha: &DVector<f64>) -> Result<()> {
        let piv = alpha[row];
        let theta = self.xb[row].max(0.0) / piv;
        for r in 0..self.rows() {
            if r != row {
                self.xb[r] -= theta * alpha[r];
            }
        }
        self.xb[row] = theta;
        let pivot_row = self.binv.row(row) / piv;
        for r in 0..self.rows() {
            if r != row && alpha[r] != 0.0 {
                let factor = alpha[r];
                let mut target = self.binv.row_mut(r);
                target -= &pivot_row * factor;
            }
        }
        self.binv.set_row(row, &pivot_row);
        self.basis[row] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    /// Runs Bland-rule pivots until optimal for `cost` over variables allowed by `eligible`.
    fn run(
        &mut self,
        cost: &dyn Fn(usize) -> f64,
        eligible: &dyn Fn(usize) -> bool,
        opts: &SimplexOptions,
    ) -> Result<()> {
        let total = self.n_orig + self.rows();
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(Error::IterationLimit {
                    limit: opts.max_iterations,
                });
            }
            let y = self.duals(cost);
            let priced = self.mat.tr_mul(&y);
            let mut in_basis = vec![false; total];
            for &j in &self.basis {
                in_basis[j] = true;
            }
            let reduced = |j: usize| {
                let p = if j < self.n_orig { priced[j] } else { y[j - self.n_orig] };
                cost(j) - p
            };
            let entering = (0..total)
                .find(|&j| !in_basis[j] && eligible(j) && reduced(j) < -opts.optimality_tol);
            let Some(entering) = entering else {
                return Ok(());
            };
            let alpha = &self.binv * self.column(entering);
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows() {
                if alpha[r] > PIVOT_TOL {
                    let ratio = self.xb[r].max(0.0) / alpha[r];
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((best_r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if (tie && self.basis[r] < self.basis[best_r]) || (!tie && ratio < best) {
                                Some((r, ratio))
                            } else {
                                Some((best_r, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(row, entering, &alpha)?;
        }
    }

    /// Pivots zero-level artificials out of the basis wherever a structural
    /// column has a usable entry in their row.
    fn expel_artificials(&mut self) -> Result<()> {
        for row in 0..self.rows() {
            if self.basis[row] < self.n_orig {
                continue;
            }
            let r_binv = self.binv.row(row).clone_owned();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_orig {
                if self.basis.contains(&j) {
                    continue;
                }
                let entry = r_binv.dot(&self.mat.column(j).transpose());
                if entry.abs() > 1e-7 && best.is_none_or(|(_, b)| entry.abs() > b) {
                    best = Some((j, entry.abs()));
                }
            }
            if let Some((j, _)) = best {
                let alpha = &self.binv * self.column(j);
                self.pivot(row, j, &alpha)?;
            }
        }
        Ok(())
    }
}

/// Phase 1 only: returns a basic feasible point, or `Error::Infeasible`.
pub fn find_feasible(mat: &DMatrix<f64>, b: &DVector<f64>, opts: &SimplexOptions) -> Result<LpSolution> {
    let zero = DVector::zeros(mat.ncols());
    solve_impl(mat, b, &zero, opts, true)
}

/// Solves `min c^T x, M x = b, x >= 0`.
pub fn solve(
    mat: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    opts: &SimplexOptions,
) -> Result<LpSolution> {
    solve_impl(mat, b, c, opts, false)
}

fn solve_impl(
    mat: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    opts: &SimplexOptions,
    phase_one_only: bool,
) -> Result<LpSolution> {
    check_len("lp rhs", mat.nrows(), b.len())?;
    check_len("lp cost", mat.ncols(), c.len())?;
    let n_orig = mat.ncols();
    let mut tab = Tableau::new(mat, b);

    if tab.rows() > 0 {
        let phase1_cost = |j: usize| if j >= n_orig { 1.0 } else { 0.0 };
        tab.run(&phase1_cost, &|j| j < n_orig, opts)?;
        tab.refactor()?;
        let infeasibility: f64 = tab
            .basis
            .iter()
            .zip(tab.xb.iter())
            .filter(|(j, _)| **j >= n_orig)
            .map(|(_, x)| x.abs())
            .sum();
        if infeasibility > opts.feasibility_tol * (1.0 + tab.rhs.iter().map(|x| x.abs()).sum::<f64>()) {
            return Err(Error::Infeasible);
        }
        tab.expel_artificials()?;
        tab.refactor()?;
    }

    let cost = |j: usize| if j < n_orig { c[j] } else { 0.0 };
    if !phase_one_only && tab.rows() > 0 {
        tab.run(&cost, &|j| j < n_orig, opts)?;
        tab.refactor()?;
    }

    let mut x = DVector::zeros(n_orig);
    for (k, &j) in tab.basis.iter().enumerate() {
        if j < n_orig {
            x[j] = tab.xb[k].max(0.0);
        }
    }
    let y_flipped = if tab.rows() > 0 {
        let bm = tab.basis_matrix();
        let cb = DVector::from_fn(tab.rows(), |k, _| cost(tab.basis[k]));
        bm.transpose()
            .lu()
            .solve(&cb)
            .ok_or_else(|| Error::NumericallySingular("simplex dual system".into()))?
    } else {
        DVector::zeros(0)
    };
    let duals = DVector::from_fn(tab.rows(), |r, _| y_flipped[r] * tab.flips[r]);
    Ok(LpSolution {
        objective: c.dot(&x),
        x,
        duals,
        basis: tab.basis,
        iterations: tab.iterations,
    })
}

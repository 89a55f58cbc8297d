//! Vertex enumeration for centrally symmetric polytopes `{c in R^n : |W c|_inf <= 1}`.
//!
//! Every vertex is the solution of `W_S c = s` for `n` linearly independent rows
//! `S` and a sign pattern `s`. Patterns are enumerated with `s_0 = +1`; the
//! reflected vertex `-c` is implied by symmetry.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Upper bound on `C(rows, n) * 2^(n-1)` linear solves.
pub const MAX_CANDIDATES: u128 = 400_000_000;

const FEAS_TOL: f64 = 1e-9;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[derive(Debug, Clone)]
pub struct BestVertex {
    pub score: f64,
    pub vertex: DVector<f64>,
}

/// Maximizes `score` over the vertices of the polytope, including reflections.
///
/// Rows of `w` that vanish impose no constraint and are skipped. Returns
/// `Ok(None)` when no vertex exists (the polytope is unbounded in some
/// direction, which also covers `rank W < n`).
pub fn maximize_over_vertices<F>(w: &DMatrix<f64>, score: F) -> Result<Option<BestVertex>>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let dim = w.ncols();
    if dim == 0 {
        return Ok(Some(BestVertex {
            score: score(&DVector::zeros(0)),
            vertex: DVector::zeros(0),
        }));
    }
    let rows: Vec<usize> = (0..w.nrows())
        .filter(|&i| w.row(i).norm() > 1e-14)
        .collect();
    let candidates = binomial(rows.len(), dim).saturating_mul(1u128 << (dim - 1));
    if candidates > MAX_CANDIDATES {
        return Err(Error::SizeLimitExceeded(format!(
            "{candidates} vertex candidates for dimension {dim} with {} constraints",
            rows.len()
        )));
    }
    let row_norms: Vec<f64> = (0..w.nrows()).map(|i| w.row(i).norm()).collect();

    let best = rows
        .iter()
        .copied()
        .combinations(dim)
        .enumerate()
        .par_bridge()
        .filter_map(|(idx, subset)| {
            let sub = DMatrix::from_fn(dim, dim, |r, c| w[(subset[r], c)]);
            let scale: f64 = subset.iter().map(|&i| row_norms[i]).product();
            let lu = sub.lu();
            if lu.determinant().abs() <= 1e-12 * scale {
                return None;
            }
            let mut local: Option<(f64, usize, DVector<f64>)> = None;
            for pattern in 0..(1usize << (dim - 1)) {
                let signs = DVector::from_fn(dim, |k, _| {
                    if k > 0 && (pattern >> (k - 1)) & 1 == 1 {
                        -1.0
                    } else {
                        1.0
                    }
                });
                let Some(c) = lu.solve(&signs) else { continue };
                if !c.iter().all(|x| x.is_finite()) {
                    continue;
                }
                let feasible = (w * &c).iter().all(|x| x.abs() <= 1.0 + FEAS_TOL);
                if !feasible {
                    continue;
                }
                for (flip, cand) in [(0usize, c.clone()), (1, -c)] {
                    let s = score(&cand);
                    let order = (idx << dim) | (pattern << 1) | flip;
                    let better = match &local {
                        None => true,
                        Some((bs, bo, _)) => s > *bs || (s == *bs && order < *bo),
                    };
                    if better {
                        local = Some((s, order, cand));
                    }
                }
            }
            local
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        });
    Ok(best.map(|(score, _, vertex)| BestVertex { score, vertex }))
}

//! Synthetic instances with known ground truth, and noise injection.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{numerical_rank, DiscretizationFamily, ProblemInstance, BASIS_TOL};

/// Redraws allowed for a rank-deficient random dictionary.
pub const MAX_RESEEDS: u64 = 16;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-like random orthogonal matrix: Q factor of a Gaussian matrix with the
/// signs of `diag R` absorbed.
fn random_orthogonal(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, m, m).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        if r[(k, k)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Embedding of `l1` into `l2`: `astar = id`, canonical basis, `u_true = f`.
pub fn make_denoising(n_atoms: usize, f: &DVector<f64>) -> Result<(ProblemInstance, DiscretizationFamily)> {
    if n_atoms == 0 {
        return Err(Error::InvalidArgument("need at least one atom".into()));
    }
    crate::error::check_len("f", n_atoms, f.len())?;
    let inst = ProblemInstance::from_truth(DMatrix::identity(n_atoms, n_atoms), f.clone())?;
    let fam = DiscretizationFamily::canonical(n_atoms, n_atoms)?;
    Ok((inst, fam))
}

/// Singular system `(Az)_i = sigma_i <z, v_i>`: `astar = V diag(sigma)` with
/// orthonormal `V`, basis `V`, and `u_true = e_1`.
///
/// `rotation_seed = None` gives `V = id`. `m = N = sigmas.len()`.
pub fn make_singular_basis(
    sigmas: &[f64],
    rotation_seed: Option<u64>,
) -> Result<(ProblemInstance, DiscretizationFamily)> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("need at least one singular value".into()));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("singular value {bad} is not positive")));
    }
    if sigmas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("singular values must be nonincreasing".into()));
    }
    let m = sigmas.len();
    let v = match rotation_seed {
        Some(seed) => random_orthogonal(&mut ChaCha8Rng::seed_from_u64(seed), m),
        None => DMatrix::identity(m, m),
    };
    let astar = &v * DMatrix::from_diagonal(&DVector::from_column_slice(sigmas));
    let mut u_true = DVector::zeros(m);
    u_true[0] = 1.0;
    let inst = ProblemInstance::from_truth(astar, u_true)?;
    let fam = DiscretizationFamily::new(v)?;
    Ok((inst, fam))
}

/// Gaussian dictionary with unit columns and a `k`-sparse truth with entries
/// `+-[0.5, 1.5]`. The family is the left singular basis ordered by
/// decreasing singular value.
pub fn make_random_sparse(
    m: usize,
    n_atoms: usize,
    k: usize,
    seed: u64,
) -> Result<(ProblemInstance, DiscretizationFamily)> {
    if !(k <= m && m <= n_atoms) || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need k <= m <= N with m >= 1, got k = {k}, m = {m}, N = {n_atoms}"
        )));
    }
    for attempt in 0..MAX_RESEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let mut astar = gaussian_matrix(&mut rng, m, n_atoms);
        let mut degenerate = false;
        for mut col in astar.column_iter_mut() {
            let norm = col.norm();
            if norm < 1e-8 {
                degenerate = true;
            }
            col /= norm;
        }
        if degenerate || numerical_rank(&astar, BASIS_TOL) < m {
            continue;
        }
        let mut u_true = DVector::zeros(n_atoms);
        for i in index::sample(&mut rng, n_atoms, k) {
            let magnitude = rng.random_range(0.5..=1.5);
            u_true[i] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        }

        let svd = astar.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let basis = DMatrix::from_fn(m, m, |r, c| u[(r, order[c])]);

        let inst = ProblemInstance::from_truth(astar, u_true)?;
        let fam = DiscretizationFamily::new(basis)?;
        return Ok((inst, fam));
    }
    Err(Error::Degenerate(format!(
        "no full-rank dictionary after {MAX_RESEEDS} draws"
    )))
}

/// `f + delta e` for a uniformly random unit vector `e`.
pub fn add_noise(f: &DVector<f64>, delta: f64, seed: u64) -> Result<DVector<f64>> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be finite and >= 0, got {delta}")));
    }
    if delta == 0.0 || f.is_empty() {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let e = DVector::from_fn(f.len(), |_, _| StandardNormal.sample(&mut rng));
        let norm: f64 = e.norm();
        if norm > 1e-12 {
            return Ok(f + e * (delta / norm));
        }
    }
}

#![allow(dead_code)]

use least_error::model::{DiscretizationFamily, ProblemInstance};
use least_error::problems::{make_denoising, make_random_sparse, make_singular_basis};
use nalgebra::{DMatrix, DVector};

pub type Fixture = (String, ProblemInstance, DiscretizationFamily);

/// Small instances with known structure, all with `N <= 12` and `m <= 6`.
pub fn fixture_set() -> Vec<Fixture> {
    let mut out = Vec::new();
    let f = DVector::from_column_slice(&[3.0, -1.0, 0.5, 0.2]);
    let (i, fam) = make_denoising(4, &f).unwrap();
    out.push(("denoise4".to_string(), i, fam));
    let f = DVector::from_column_slice(&[0.0, 2.0, -0.7, 0.0, 1.1, 0.3]);
    let (i, fam) = make_denoising(6, &f).unwrap();
    out.push(("denoise6".to_string(), i, fam));

    for (k, sig) in [
        vec![1.0, 0.5, 1.0 / 3.0],
        vec![1.0, 0.5, 0.25, 0.125],
        vec![2.0, 1.5, 1.0, 0.3, 0.1],
    ]
    .into_iter()
    .enumerate()
    {
        let (i, fam) = make_singular_basis(&sig, Some(100 + k as u64)).unwrap();
        out.push((format!("singular{}", sig.len()), i, fam));
    }

    let astar = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    let i = ProblemInstance::from_truth(astar, DVector::from_column_slice(&[0.0, 0.0, 1.0])).unwrap();
    out.push(("two_by_three".to_string(), i, DiscretizationFamily::canonical(2, 2).unwrap()));

    for (m, n_atoms, k, seed) in [(4, 6, 1, 1), (4, 8, 2, 2), (5, 10, 2, 3), (6, 10, 3, 4), (5, 7, 1, 5), (6, 12, 2, 6)] {
        let (i, fam) = make_random_sparse(m, n_atoms, k, seed).unwrap();
        out.push((format!("random_{m}x{n_atoms}_s{seed}"), i, fam));
    }
    out
}

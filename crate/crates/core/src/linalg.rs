//! Dense symmetric solves with conditioning checks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Spectral condition number of a symmetric matrix (`inf` when singular or
/// indefinite).
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number after scaling rows and columns to unit diagonal, which
/// removes the dependence on column units.
pub fn scaled_condition(m: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = m.diagonal().iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j]);
    symmetric_condition(&scaled)
}

/// Cholesky factor or `None` when the matrix is not numerically positive
/// definite.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `X'X` from row vectors.
pub fn gram(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, Vec::len);
    let mut g = DMatrix::zeros(k, k);
    for r in rows {
        for i in 0..k {
            for j in i..k {
                g[(i, j)] += r[i] * r[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

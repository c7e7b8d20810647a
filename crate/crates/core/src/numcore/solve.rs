use nalgebra::{DMatrix, DVector};

use super::Matrix;
use crate::error::{Error, Result};

/// Relative pivot floor below which a factorization is treated as singular.
const PIVOT_TOL: f64 = 1e-13;

/// Solves `(G + eps·trace(G)/k·I) w = b` by Cholesky factorization.
///
/// `G` must be symmetric positive semidefinite. With `eps = 0` a singular `G`
/// is reported instead of returning a meaningless solution.
pub fn solve_ridge(g: &Matrix, b: &[f64], eps: f64) -> Result<Vec<f64>> {
    let k = g.rows();
    if g.cols() != k || b.len() != k {
        return Err(Error::Shape {
            op: "solve_ridge",
            lhs: g.shape(),
            rhs: (b.len(), 1),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let trace: f64 = (0..k).map(|i| g[(i, i)]).sum();
    let mut lambda = eps * trace / k as f64;
    if eps > 0.0 && lambda <= 0.0 {
        // all-zero Gram: fall back to an absolute ridge so the eps path never fails
        lambda = eps;
    }
    let mut a = DMatrix::from_row_slice(k, k, g.data());
    for i in 0..k {
        a[(i, i)] += lambda;
    }
    let scale = (0..k).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Singular("solve_ridge"))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if scale == 0.0 || min_pivot <= PIVOT_TOL * scale {
        return Err(Error::Singular("solve_ridge"));
    }
    let w = chol.solve(&DVector::from_column_slice(b));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_ridge"));
    }
    Ok(w.iter().copied().collect())
}

/// Dense symmetric eigendecomposition; eigenvalues ascending, eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let m = DMatrix::from_row_slice(n, n, a.data());
    let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, c)] = eig.eigenvectors[(r, src)];
        }
    }
    Ok((values, vectors))
}

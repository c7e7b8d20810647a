use super::weights::{knn_weights, SparseWeights};
use crate::error::{Error, Result};
use crate::numcore::{symmetric_eigen, Matrix};

/// Output of a from-scratch LLE solve.
#[derive(Clone, Debug)]
pub struct LleSolution {
    /// `N × D`, columns scaled so that `YᵀY = N·I`.
    pub y: Matrix,
    /// The `D` retained eigenvalues of `M`, ascending.
    pub eigenvalues: Vec<f64>,
    /// The dropped bottom eigenvalue (the constant direction).
    pub bottom: f64,
    pub weights: SparseWeights,
}

/// `M = (I − W)ᵀ(I − W)` as a dense matrix.
pub fn alignment_matrix(w: &SparseWeights, n: usize) -> Matrix {
    let mut iw = Matrix::identity(n);
    for i in 0..n.min(w.len()) {
        for &(j, x) in w.row(i) {
            iw[(i, j)] -= x;
        }
    }
    iw.matmul_tn(&iw).expect("square")
}

/// Standard LLE: kNN weights, dense alignment matrix, bottom eigenvectors.
pub fn full_lle_oracle(x: &Matrix, k: usize, d: usize, eps: f64) -> Result<LleSolution> {
    let n = x.rows();
    if n < d + 2 || k >= n {
        return Err(Error::Config(format!("LLE needs N ≥ D + 2 and k < N (N={n}, D={d}, k={k})")));
    }
    let weights = knn_weights(x, k, eps)?;
    let m = alignment_matrix(&weights, n);
    let (vals, vecs) = symmetric_eigen(&m)?;
    let scale = (n as f64).sqrt();
    let mut y = Matrix::zeros(n, d);
    for c in 0..d {
        for r in 0..n {
            y[(r, c)] = vecs[(r, c + 1)] * scale;
        }
    }
    Ok(LleSolution {
        y,
        eigenvalues: vals[1..=d].to_vec(),
        bottom: vals[0],
        weights,
    })
}

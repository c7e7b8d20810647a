use crate::error::{Error, Result};
use crate::numcore::{solve_ridge, symmetric_eigen, Matrix};

/// Weights minimizing `‖x − Σ w_j x_j‖²` subject to `Σ w_j = 1`, from the
/// ridge-regularized local Gram system `(G + eps·tr(G)/k·I) w = 1`.
pub fn reconstruction_weights(x_center: &[f64], nbrs: &Matrix, eps: f64) -> Result<Vec<f64>> {
    let k = nbrs.rows();
    if nbrs.cols() != x_center.len() {
        return Err(Error::Shape {
            op: "reconstruction_weights",
            lhs: (1, x_center.len()),
            rhs: nbrs.shape(),
        });
    }
    if k == 0 {
        return Err(Error::Shape {
            op: "reconstruction_weights",
            lhs: (0, nbrs.cols()),
            rhs: (1, nbrs.cols()),
        });
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let diff: Vec<Vec<f64>> = (0..k)
        .map(|j| x_center.iter().zip(nbrs.row(j)).map(|(c, x)| c - x).collect())
        .collect();
    let mut g = Matrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v: f64 = diff[a].iter().zip(&diff[b]).map(|(x, y)| x * y).sum();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    let w = if eps > 0.0 {
        solve_ridge(&g, &vec![1.0; k], eps)?
    } else {
        exact_constrained(&g)?
    };
    let total: f64 = w.iter().sum();
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::Singular("reconstruction_weights"));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Unregularized constrained minimizer of `wᵀGw` with `Σ w = 1` for a possibly
/// singular Gram: a null direction with nonzero sum if one exists, else `G⁺1`.
fn exact_constrained(g: &Matrix) -> Result<Vec<f64>> {
    let k = g.rows();
    let (vals, vecs) = symmetric_eigen(g)?;
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Err(Error::Singular("reconstruction_weights"));
    }
    let tol = 1e-12 * top * k as f64;
    let mut null = vec![0.0; k];
    let mut pinv = vec![0.0; k];
    for (c, &lam) in vals.iter().enumerate() {
        let proj: f64 = (0..k).map(|r| vecs[(r, c)]).sum();
        for r in 0..k {
            if lam.abs() <= tol {
                null[r] += proj * vecs[(r, c)];
            } else {
                pinv[r] += proj / lam * vecs[(r, c)];
            }
        }
    }
    let null_sum: f64 = null.iter().sum();
    Ok(if null_sum.abs() > 1e-9 { null } else { pinv })
}

/// `alpha·Σ w_j x_j + (1 − alpha)·x`.
pub fn residual_blend(x: &[f64], nbrs: &Matrix, w: &[f64], alpha: f64) -> Vec<f64> {
    let mut recon = vec![0.0; x.len()];
    for (j, &wj) in w.iter().enumerate() {
        for (r, v) in recon.iter_mut().zip(nbrs.row(j)) {
            *r += wj * v;
        }
    }
    recon.iter().zip(x).map(|(r, xi)| alpha * r + (1.0 - alpha) * xi).collect()
}

/// `Σ_j w_j·row(j)`, accumulated in entry order.
pub(crate) fn weighted_sum<'a>(w: &[(usize, f64)], row: impl Fn(usize) -> &'a [f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for &(j, wj) in w {
        for (o, v) in out.iter_mut().zip(row(j)) {
            *o += wj * v;
        }
    }
    out
}

/// Merges repeated neighbors by summing their weights; sorted by neighbor.
pub(crate) fn merge(neighbors: &[usize], w: &[f64]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, f64)> = neighbors.iter().copied().zip(w.iter().copied()).collect();
    pairs.sort_by_key(|p| p.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
    for (n, x) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == n => last.1 += x,
            _ => out.push((n, x)),
        }
    }
    out
}

/// Row-sparse weight matrix `W` with a reverse index (who reconstructs from `u`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseWeights {
    rows: Vec<Vec<(usize, f64)>>,
    referrers: Vec<Vec<usize>>,
}

impl SparseWeights {
    pub fn new(n: usize) -> Self {
        SparseWeights {
            rows: vec![Vec::new(); n],
            referrers: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn grow(&mut self, n: usize) {
        if n > self.rows.len() {
            self.rows.resize(n, Vec::new());
            self.referrers.resize(n, Vec::new());
        }
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Entry `w_iu`, zero when absent.
    pub fn get(&self, i: usize, u: usize) -> f64 {
        let row = &self.rows[i];
        row.binary_search_by_key(&u, |e| e.0).map_or(0.0, |p| row[p].1)
    }

    /// Rows `i` with a nonzero entry in column `u`.
    pub fn referrers(&self, u: usize) -> &[usize] {
        &self.referrers[u]
    }

    pub fn set_row(&mut self, i: usize, mut entries: Vec<(usize, f64)>) {
        entries.sort_by_key(|e| e.0);
        let need = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0).max(i + 1);
        self.grow(need);
        for &(j, _) in &self.rows[i] {
            if let Some(pos) = self.referrers[j].iter().position(|&r| r == i) {
                self.referrers[j].swap_remove(pos);
            }
        }
        for &(j, _) in &entries {
            self.referrers[j].push(i);
        }
        self.rows[i] = entries;
    }

    /// `y_i − Σ_j w_ij y_j`, or zeros for a row without weights.
    pub fn residual(&self, y: &Matrix, i: usize) -> Vec<f64> {
        let row = &self.rows[i];
        if row.is_empty() {
            return vec![0.0; y.cols()];
        }
        let recon = weighted_sum(row, |j| y.row(j), y.cols());
        y.row(i).iter().zip(&recon).map(|(a, b)| a - b).collect()
    }
}

/// `Σ_i ‖y_i − Σ_j w_ij y_j‖²` over rows that carry weights.
pub fn reconstruction_loss(y: &Matrix, w: &SparseWeights) -> f64 {
    (0..w.len().min(y.rows()))
        .map(|i| w.residual(y, i).iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// Indices of the `k` nearest rows to row `i` by Euclidean distance,
/// excluding `i`; ties go to the smaller index.
pub fn knn(x: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    d.truncate(k);
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    d.into_iter().map(|(_, j)| j).collect()
}

/// kNN reconstruction weights for every row of `x`.
pub fn knn_weights(x: &Matrix, k: usize, eps: f64) -> Result<SparseWeights> {
    let mut w = SparseWeights::new(x.rows());
    for i in 0..x.rows() {
        let nb = knn(x, i, k);
        if nb.is_empty() {
            continue;
        }
        let ws = reconstruction_weights(x.row(i), &x.gather_rows(&nb), eps)?;
        w.set_row(i, merge(&nb, &ws));
    }
    Ok(w)
}

use std::collections::HashMap;

use super::weights::weighted_sum;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const MAX_SWEEPS: usize = 100;
pub const SWEEP_TOL: f64 = 1e-8;

/// A node whose row is rebuilt from weighted neighbors (entries sorted or not).
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub node: usize,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementSolution {
    /// One row per reconstruction, in input order.
    pub rows: Matrix,
    pub sweeps: usize,
    pub max_change: f64,
}

/// Embeds the reconstruction targets by minimizing `Σ‖y_i − Σ_j w_ij y_j‖²`
/// with all other rows of `y` held fixed. Targets that reference each other
/// are solved by Jacobi sweeps from the closed form over fixed neighbors.
pub fn embed_increment(y: &Matrix, recs: &[Reconstruction]) -> Result<IncrementSolution> {
    let d = y.cols();
    let slot: HashMap<usize, usize> = recs.iter().enumerate().map(|(s, r)| (r.node, s)).collect();
    for r in recs {
        if let Some(&(j, _)) = r.weights.iter().find(|(j, _)| !slot.contains_key(j) && *j >= y.rows()) {
            return Err(Error::UnknownNode(usize::MAX, j));
        }
    }
    let coupled = recs.iter().any(|r| r.weights.iter().any(|(j, _)| slot.contains_key(j)));
    let mut cur = Matrix::zeros(recs.len(), d);
    if !coupled {
        for (s, r) in recs.iter().enumerate() {
            cur.row_mut(s).copy_from_slice(&weighted_sum(&r.weights, |j| y.row(j), d));
        }
        return Ok(IncrementSolution {
            rows: cur,
            sweeps: 0,
            max_change: 0.0,
        });
    }
    // closed form over the fixed neighbors only
    for (s, r) in recs.iter().enumerate() {
        let fixed: Vec<(usize, f64)> = r.weights.iter().copied().filter(|(j, _)| !slot.contains_key(j)).collect();
        let total: f64 = fixed.iter().map(|e| e.1).sum();
        let mut row = weighted_sum(&fixed, |j| y.row(j), d);
        if total.abs() > 1e-12 {
            row.iter_mut().for_each(|x| *x /= total);
        }
        cur.row_mut(s).copy_from_slice(&row);
    }
    let mut max_change = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut next = Matrix::zeros(recs.len(), d);
        for (s, r) in recs.iter().enumerate() {
            let row = weighted_sum(&r.weights, |j| slot.get(&j).map_or_else(|| y.row(j), |&t| cur.row(t)), d);
            next.row_mut(s).copy_from_slice(&row);
        }
        max_change = (0..recs.len())
            .map(|s| next.row(s).iter().zip(cur.row(s)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        cur = next;
        if !max_change.is_finite() {
            break;
        }
        if max_change < SWEEP_TOL {
            return Ok(IncrementSolution {
                rows: cur,
                sweeps: sweep,
                max_change,
            });
        }
    }
    Err(Error::NonConvergence { residual: max_change })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn y5() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn closed_form_single_node() {
        let y = y5();
        let rec = Reconstruction {
            node: 3,
            weights: vec![(0, 0.25), (1, 0.75)],
        };
        let s = embed_increment(&y, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(s.rows.row(0), &[0.25, 0.75]);
        let mut full = y.clone();
        full.row_mut(3).copy_from_slice(s.rows.row(0));
        let mut w = super::super::weights::SparseWeights::new(5);
        w.set_row(3, rec.weights.clone());
        assert_eq!(super::super::weights::reconstruction_loss(&full, &w), 0.0);
    }

    #[test]
    fn decoupled_nodes_are_order_invariant() {
        let y = y5();
        let a = Reconstruction {
            node: 3,
            weights: vec![(0, 0.5), (2, 0.5)],
        };
        let b = Reconstruction {
            node: 4,
            weights: vec![(1, 2.0), (2, -1.0)],
        };
        let ab = embed_increment(&y, &[a.clone(), b.clone()]).unwrap();
        let ba = embed_increment(&y, &[b, a]).unwrap();
        assert_eq!(ab.rows.row(0), ba.rows.row(1));
        assert_eq!(ab.rows.row(1), ba.rows.row(0));
    }

    #[test]
    fn coupled_pair_matches_dense_solve() {
        let y = y5();
        let a = Reconstruction {
            node: 3,
            weights: vec![(0, 0.4), (4, 0.3), (1, 0.3)],
        };
        let b = Reconstruction {
            node: 4,
            weights: vec![(2, 0.6), (3, 0.4)],
        };
        let s = embed_increment(&y, &[a, b]).unwrap();
        // (I − W_nn) Y_n = W_ne Y_e
        let lhs = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.4, 1.0]);
        for c in 0..2 {
            let rhs = DVector::from_column_slice(&[0.4 * y[(0, c)] + 0.3 * y[(1, c)], 0.6 * y[(2, c)]]);
            let sol = lhs.clone().lu().solve(&rhs).unwrap();
            assert!((s.rows[(0, c)] - sol[0]).abs() < 1e-6);
            assert!((s.rows[(1, c)] - sol[1]).abs() < 1e-6);
        }
        assert!(s.sweeps > 0);
    }

    #[test]
    fn closed_cycle_does_not_converge() {
        let y = y5();
        let a = Reconstruction {
            node: 3,
            weights: vec![(4, 2.0), (0, -1.0)],
        };
        let b = Reconstruction {
            node: 4,
            weights: vec![(3, 2.0), (1, -1.0)],
        };
        assert!(matches!(embed_increment(&y, &[a, b]), Err(Error::NonConvergence { .. })));
    }
}

use std::collections::{BTreeSet, HashMap};

use super::weights::SparseWeights;
use crate::numcore::Matrix;

pub const MAX_HALVINGS: usize = 20;

/// Reconstruction weights plus the frozen spectral targets of the last static
/// phase, and running sums `S = RᵀR` (R = (I−W)Y) and `P = YᵀY` kept in step
/// with the table they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentState {
    /// `Y_staticᵀ M Y_static`.
    pub lambda: Matrix,
    /// `Y_staticᵀ Y_static / N_static`; the orthogonality target for `n` rows
    /// is `n` times this.
    pub gram_per_node: Matrix,
    pub static_nodes: usize,
    pub weights: SparseWeights,
    s: Matrix,
    p: Matrix,
}

fn outer_sum(rows: &[Vec<f64>], d: usize) -> Matrix {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = Matrix::from_vec(rows.len(), d, data).expect("finite rows");
    m.matmul_tn(&m).expect("shapes agree")
}

impl AlignmentState {
    /// Freezes `Λ = YᵀMY` and the per-node Gram of `y` under `weights`.
    pub fn capture(y: &Matrix, mut weights: SparseWeights) -> AlignmentState {
        weights.grow(y.rows());
        let d = y.cols();
        let res: Vec<Vec<f64>> = (0..y.rows()).map(|i| weights.residual(y, i)).collect();
        let s = outer_sum(&res, d);
        let p = y.matmul_tn(y).expect("square");
        let n = y.rows().max(1);
        AlignmentState {
            lambda: s.clone(),
            gram_per_node: p.scale(1.0 / n as f64),
            static_nodes: y.rows(),
            weights,
            s,
            p,
        }
    }

    pub(crate) fn from_parts(lambda: Matrix, gram_per_node: Matrix, static_nodes: usize, weights: SparseWeights, s: Matrix, p: Matrix) -> Self {
        AlignmentState {
            lambda,
            gram_per_node,
            static_nodes,
            weights,
            s,
            p,
        }
    }

    /// Current `RᵀR`.
    pub fn s(&self) -> &Matrix {
        &self.s
    }

    /// Current `YᵀY`.
    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// `‖S − Λ‖² + μ‖P − n·gram_per_node‖²`.
    pub fn objective(&self, mu: f64, n: usize) -> f64 {
        penalized(&self.s, &self.p, &self.lambda, &self.gram_per_node.scale(n as f64), mu)
    }

    /// Replaces table rows and weight rows together, keeping `S` and `P` exact
    /// up to rounding. `y` grows to cover any new row index.
    pub fn replace(&mut self, y: &mut Matrix, rows: &[(usize, Vec<f64>)], wrows: Vec<(usize, Vec<(usize, f64)>)>) {
        let d = y.cols();
        let need = rows
            .iter()
            .map(|r| r.0 + 1)
            .chain(wrows.iter().map(|r| r.0 + 1))
            .chain(wrows.iter().flat_map(|r| r.1.iter().map(|e| e.0 + 1)))
            .max()
            .unwrap_or(0);
        if need > y.rows() {
            y.resize_rows(need);
        }
        self.weights.grow(y.rows());
        let mut affected: BTreeSet<usize> = rows.iter().map(|r| r.0).chain(wrows.iter().map(|r| r.0)).collect();
        for (u, _) in rows {
            affected.extend(self.weights.referrers(*u).iter().copied());
        }
        let affected: Vec<usize> = affected.into_iter().collect();
        let old_r: Vec<Vec<f64>> = affected.iter().map(|&i| self.weights.residual(y, i)).collect();
        let old_y: Vec<Vec<f64>> = rows.iter().map(|(u, _)| y.row(*u).to_vec()).collect();
        for (u, row) in rows {
            y.row_mut(*u).copy_from_slice(row);
        }
        for (i, entries) in wrows {
            self.weights.set_row(i, entries);
        }
        let new_r: Vec<Vec<f64>> = affected.iter().map(|&i| self.weights.residual(y, i)).collect();
        let new_y: Vec<Vec<f64>> = rows.iter().map(|(_, r)| r.clone()).collect();
        if !affected.is_empty() {
            self.s = self.s.sub(&outer_sum(&old_r, d)).expect("dims").add(&outer_sum(&new_r, d)).expect("dims");
        }
        if !rows.is_empty() {
            self.p = self.p.sub(&outer_sum(&old_y, d)).expect("dims").add(&outer_sum(&new_y, d)).expect("dims");
        }
    }
}

fn penalized(s: &Matrix, p: &Matrix, lambda: &Matrix, target: &Matrix, mu: f64) -> f64 {
    let a = s.sub(lambda).expect("dims").frobenius_norm();
    let b = p.sub(target).expect("dims").frobenius_norm();
    a * a + mu * b * b
}

/// Refinement of the rows in `update_set` against a frozen spectral target.
#[derive(Clone, Debug)]
pub struct AlignmentProblem {
    pub state: AlignmentState,
    pub y: Matrix,
    pub update_set: Vec<usize>,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    /// Penalized objective at the start and after each accepted step.
    pub trajectory: Vec<f64>,
    /// A step was requested but every halving increased the objective.
    pub stalled: bool,
}

/// Normalized gradient descent on `‖YᵀMY − Λ‖² + μ‖YᵀY − C‖²` over the rows
/// of the update set only. Each step moves the update rows by a fraction
/// `step_size` of their norm, halving on increase.
pub fn incremental_refine(problem: &mut AlignmentProblem, steps: usize, step_size: f64) -> RefineOutcome {
    let n = problem.y.rows();
    let d = problem.y.cols();
    let mu = problem.mu;
    let target = problem.state.gram_per_node.scale(n as f64);
    let mut j = penalized(&problem.state.s, &problem.state.p, &problem.state.lambda, &target, mu);
    let mut out = RefineOutcome {
        trajectory: vec![j],
        stalled: false,
    };
    let mut upd: Vec<usize> = problem.update_set.iter().copied().filter(|&u| u < n).collect();
    upd.sort_unstable();
    upd.dedup();
    if upd.is_empty() || steps == 0 || d == 0 {
        return out;
    }
    let mut affected: BTreeSet<usize> = upd.iter().copied().collect();
    for &u in &upd {
        affected.extend(problem.state.weights.referrers(u).iter().copied());
    }
    let affected: Vec<usize> = affected.into_iter().collect();
    let mut eta = step_size;

    for _ in 0..steps {
        let st = &problem.state;
        let y = &problem.y;
        let e = st.s.sub(&st.lambda).expect("dims");
        let f = st.p.sub(&target).expect("dims");
        let res: HashMap<usize, Vec<f64>> = affected.iter().map(|&i| (i, st.weights.residual(y, i))).collect();
        // rows of (I − W)ᵀR for the update set
        let mut mr = Matrix::zeros(upd.len(), d);
        let mut yu = Matrix::zeros(upd.len(), d);
        for (k, &u) in upd.iter().enumerate() {
            let row = mr.row_mut(k);
            row.copy_from_slice(&res[&u]);
            for &i in st.weights.referrers(u) {
                let w = st.weights.get(i, u);
                for (a, b) in row.iter_mut().zip(&res[&i]) {
                    *a -= w * b;
                }
            }
            yu.row_mut(k).copy_from_slice(y.row(u));
        }
        let mut grad = mr.matmul(&e).expect("dims");
        grad.axpy(mu, &yu.matmul(&f).expect("dims"));
        grad.scale_in_place(4.0);
        let gnorm = grad.frobenius_norm();
        if gnorm == 0.0 || !gnorm.is_finite() {
            break;
        }
        let ynorm = yu.frobenius_norm();
        let base = if ynorm > 0.0 { ynorm } else { 1.0 };

        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let scale = eta * base / gnorm;
            let mut trial = y.clone();
            for (k, &u) in upd.iter().enumerate() {
                for (a, g) in trial.row_mut(u).iter_mut().zip(grad.row(k)) {
                    *a -= scale * g;
                }
            }
            let new_res: Vec<Vec<f64>> = affected.iter().map(|&i| st.weights.residual(&trial, i)).collect();
            let old_res: Vec<Vec<f64>> = affected.iter().map(|i| res[i].clone()).collect();
            let s2 = st.s.sub(&outer_sum(&old_res, d)).expect("dims").add(&outer_sum(&new_res, d)).expect("dims");
            let new_y: Vec<Vec<f64>> = upd.iter().map(|&u| trial.row(u).to_vec()).collect();
            let p2 = st.p.sub(&yu.matmul_tn(&yu).expect("dims")).expect("dims").add(&outer_sum(&new_y, d)).expect("dims");
            let j2 = penalized(&s2, &p2, &st.lambda, &target, mu);
            if j2 <= j {
                problem.y = trial;
                problem.state.s = s2;
                problem.state.p = p2;
                j = j2;
                out.trajectory.push(j);
                accepted = true;
                eta = (eta * 2.0).min(step_size);
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            out.stalled = true;
            break;
        }
    }
    out
}

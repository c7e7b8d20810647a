//! Taped reverse-mode differentiation over matrix-valued nodes.
//!
//! The op set is exactly what the graph model needs; it is not a general
//! autodiff engine. Every op records its inputs and whatever forward state its
//! adjoint needs, and [`Tape::backward`] walks the tape once in reverse.

use std::rc::Rc;

use super::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Compressed sparse rows with real values; used as a constant operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn spmm(&self, a: &Matrix) -> Matrix {
        let d = a.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        for r in 0..self.n_rows {
            let o = out.row_mut(r);
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                for (x, y) in o.iter_mut().zip(a.row(self.indices[p])) {
                    *x += v * y;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn spmm_t(&self, g: &Matrix) -> Matrix {
        let d = g.cols();
        let mut out = Matrix::zeros(self.n_cols, d);
        for r in 0..self.n_rows {
            let gr = g.row(r);
            for p in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[p];
                let o = out.row_mut(self.indices[p]);
                for (x, y) in o.iter_mut().zip(gr) {
                    *x += v * y;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[p])] += self.values[p];
            }
        }
        m
    }
}

/// Frobenius norms below this are left unnormalized.
pub const FROB_GUARD: f64 = 1e-12;
/// Logistic inputs are clamped to this magnitude before taking logs.
pub const SIGMOID_CLAMP: f64 = 30.0;

enum Op {
    Const,
    Param(usize),
    GatherParam { param: usize, idx: Vec<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    FrobNormalize { a: Var, norm: f64, applied: bool },
    BroadcastRows(Var),
    AddRowVec(Var, Var),
    ColSum(Var),
    Transpose(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    RowDot(Var, Var),
    MulRows(Var, Var),
    DivRows(Var, Var),
    SegmentSoftmax { seg: Rc<Vec<usize>> },
    SpMM(Rc<Csr>, Var),
    NegLogSigmoidSum { a: Var, sign: f64 },
    SumAll(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    // input of SegmentSoftmax is kept separately so the op can hold the output
    aux: Option<Var>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        value.debug_check("tape op");
        self.nodes.push(Node {
            value,
            op,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// Rows of a parameter table without copying the whole table onto the tape.
    pub fn gather_param_rows(&mut self, store: &ParamStore, id: usize, idx: Vec<usize>) -> Var {
        let value = store.get(id).value.gather_rows(&idx);
        self.push(value, Op::GatherParam { param: id, idx })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    /// `a · s` for a `1 × 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "mul_scalar",
                lhs: self.value(a).shape(),
                rhs: sv.shape(),
            });
        }
        let v = self.value(a).scale(sv.item());
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `a / ‖a‖_F`, skipped when the norm is below [`FROB_GUARD`].
    pub fn frob_normalize(&mut self, a: Var) -> Var {
        let norm = self.value(a).frobenius_norm();
        let applied = norm >= FROB_GUARD;
        let v = if applied {
            self.value(a).scale(1.0 / norm)
        } else {
            self.value(a).clone()
        };
        self.push(v, Op::FrobNormalize { a, norm, applied })
    }

    /// Repeats a `1 × d` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: av.shape(),
                rhs: (1, av.cols()),
            });
        }
        let mut v = Matrix::zeros(n, av.cols());
        for r in 0..n {
            v.row_mut(r).copy_from_slice(av.row(0));
        }
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row_vec",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bv.row(0)) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRowVec(a, b)))
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).col_sums();
        self.push(v, Op::ColSum(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(a).gather_rows(&idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Output row `idx[i]` accumulates input row `i`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, n_rows: usize) -> Var {
        let av = self.value(a);
        let mut v = Matrix::zeros(n_rows, av.cols());
        for (i, &r) in idx.iter().enumerate() {
            for (x, y) in v.row_mut(r).iter_mut().zip(av.row(i)) {
                *x += y;
            }
        }
        self.push(v, Op::ScatterAddRows(a, idx))
    }

    /// Row-wise inner products as an `m × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "row_dot",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let vals: Vec<f64> = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Matrix::column(&vals), Op::RowDot(a, b)))
    }

    fn check_col(&self, op: &'static str, a: Var, c: Var) -> Result<()> {
        let (av, cv) = (self.value(a), self.value(c));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(Error::Shape {
                op,
                lhs: av.shape(),
                rhs: cv.shape(),
            });
        }
        Ok(())
    }

    /// Scales row `i` of `a` by `c[i]`.
    pub fn mul_rows(&mut self, a: Var, c: Var) -> Result<Var> {
        self.check_col("mul_rows", a, c)?;
        let (av, cv) = (self.value(a), self.value(c));
        let mut v = av.clone();
        for r in 0..v.rows() {
            let s = cv[(r, 0)];
            v.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(v, Op::MulRows(a, c)))
    }

    /// Divides row `i` of `a` by `d[i]`.
    pub fn div_rows(&mut self, a: Var, d: Var) -> Result<Var> {
        self.check_col("div_rows", a, d)?;
        let (av, dv) = (self.value(a), self.value(d));
        let mut v = av.clone();
        for r in 0..v.rows() {
            let s = dv[(r, 0)];
            v.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        Ok(self.push(v, Op::DivRows(a, d)))
    }

    /// Softmax of an `m × 1` column within groups sharing the same `seg` id.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<Vec<usize>>, n_seg: usize) -> Var {
        let av = self.value(a);
        debug_assert_eq!(av.rows(), seg.len());
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(av[(e, 0)]);
        }
        let mut out: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(e, &s)| (av[(e, 0)] - max[s]).exp())
            .collect();
        let mut total = vec![0.0; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            total[s] += out[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out[e] /= total[s];
        }
        let v = self.push(Matrix::column(&out), Op::SegmentSoftmax { seg });
        self.nodes[v.0].aux = Some(a);
        v
    }

    pub fn spmm(&mut self, csr: Rc<Csr>, a: Var) -> Result<Var> {
        let av = self.value(a);
        if csr.n_cols != av.rows() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: (csr.n_rows, csr.n_cols),
                rhs: av.shape(),
            });
        }
        let v = csr.spmm(av);
        Ok(self.push(v, Op::SpMM(csr, a)))
    }

    /// `−Σ ln σ(sign·x)` over an `m × 1` column, inputs clamped to ±[`SIGMOID_CLAMP`].
    pub fn neg_log_sigmoid_sum(&mut self, a: Var, sign: f64) -> Var {
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .map(|&x| neg_log_sigmoid((sign * x).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)))
            .sum();
        self.push(Matrix::scalar(total), Op::NegLogSigmoidSum { a, sign })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Accumulates `∂loss/∂param` into the store's gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoForwardPass);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.value(loss).shape(),
                rhs: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::GatherParam { param, idx } => {
                    let grad = &mut store.get_mut(*param).grad;
                    for (r, &dst) in idx.iter().enumerate() {
                        for (x, y) in grad.row_mut(dst).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.scale(*c)),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::MulScalar(a, s) => {
                    let gs = g.dot(self.value(*a));
                    let ga = g.scale(self.value(*s).item());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, Matrix::scalar(gs));
                }
                Op::Hadamard(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (x, v) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if *v <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::FrobNormalize { a, norm, applied } => {
                    if *applied {
                        let y = &node.value;
                        let yg = y.dot(&g);
                        let mut ga = g;
                        ga.axpy(-yg, y);
                        ga.scale_in_place(1.0 / norm);
                        acc(&mut grads, *a, ga);
                    } else {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::BroadcastRows(a) => acc(&mut grads, *a, g.col_sums()),
                Op::AddRowVec(a, b) => {
                    acc(&mut grads, *b, g.col_sums());
                    acc(&mut grads, *a, g);
                }
                Op::ColSum(a) => {
                    let rows = self.value(*a).rows();
                    let mut ga = Matrix::zeros(rows, g.cols());
                    for r in 0..rows {
                        ga.row_mut(r).copy_from_slice(g.row(0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::GatherRows(a, idx) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, idx) => acc(&mut grads, *a, g.gather_rows(idx)),
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = bv.clone();
                    let mut gb = av.clone();
                    for r in 0..av.rows() {
                        let s = g[(r, 0)];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                        gb.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulRows(a, c) => {
                    let (av, cv) = (self.value(*a), self.value(*c));
                    let mut ga = g.clone();
                    let mut gc = Matrix::zeros(av.rows(), 1);
                    for r in 0..av.rows() {
                        gc[(r, 0)] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        let s = cv[(r, 0)];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *c, gc);
                }
                Op::DivRows(a, d) => {
                    let (av, dv) = (self.value(*a), self.value(*d));
                    let mut ga = g.clone();
                    let mut gd = Matrix::zeros(av.rows(), 1);
                    for r in 0..av.rows() {
                        let s = dv[(r, 0)];
                        let ga_dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        gd[(r, 0)] = -ga_dot / (s * s);
                        ga.row_mut(r).iter_mut().for_each(|x| *x /= s);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *d, gd);
                }
                Op::SegmentSoftmax { seg } => {
                    let y = &node.value;
                    let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = vec![0.0; n_seg];
                    for (e, &s) in seg.iter().enumerate() {
                        inner[s] += y[(e, 0)] * g[(e, 0)];
                    }
                    let mut ga = Matrix::zeros(y.rows(), 1);
                    for (e, &s) in seg.iter().enumerate() {
                        ga[(e, 0)] = y[(e, 0)] * (g[(e, 0)] - inner[s]);
                    }
                    let a = node.aux.expect("segment softmax input");
                    acc(&mut grads, a, ga);
                }
                Op::SpMM(csr, a) => acc(&mut grads, *a, csr.spmm_t(&g)),
                Op::NegLogSigmoidSum { a, sign } => {
                    let gs = g.item();
                    let ga = self.value(*a).map(|x| {
                        let t = sign * x;
                        if t.abs() > SIGMOID_CLAMP {
                            0.0
                        } else {
                            // d/dx −ln σ(sign·x) = −sign·(1 − σ(sign·x))
                            -sign * (1.0 - sigmoid(t)) * gs
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln σ(x)` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

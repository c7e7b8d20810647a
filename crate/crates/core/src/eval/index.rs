use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::EmbeddingTable;

/// Nearest-neighbor backend over a fixed candidate set.
pub trait VectorIndex {
    /// Up to `k` `(global index, score)` pairs, best first.
    fn topk(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Descending score, ties by ascending index; `-inf` sorts last.
pub(crate) fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Exact brute-force cosine index. Candidates without a row in the table or
/// with a zero row score `-inf`.
pub struct ExactCosineIndex<'a> {
    table: &'a EmbeddingTable,
    items: Vec<(usize, f64)>,
}

impl<'a> ExactCosineIndex<'a> {
    pub fn new(table: &'a EmbeddingTable, candidates: &[usize]) -> Self {
        let items = candidates
            .iter()
            .map(|&i| (i, if i < table.len() { norm(table.row(i)) } else { 0.0 }))
            .collect();
        ExactCosineIndex { table, items }
    }

    /// Every candidate scored, in candidate order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<(usize, f64)>> {
        let qn = norm(query);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::UnrankableQuery);
        }
        Ok(self
            .items
            .iter()
            .map(|&(i, n)| {
                if n == 0.0 {
                    return (i, f64::NEG_INFINITY);
                }
                let dot: f64 = query.iter().zip(self.table.row(i)).map(|(a, b)| a * b).sum();
                (i, dot / (qn * n))
            })
            .collect())
    }
}

impl VectorIndex for ExactCosineIndex<'_> {
    fn topk(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        let mut s = self.scores(query)?;
        let k = k.min(s.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < s.len() {
            s.select_nth_unstable_by(k - 1, rank_order);
            s.truncate(k);
        }
        s.sort_by(rank_order);
        Ok(s)
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Exact cosine top-`k` of `query` among `candidates`.
pub fn cosine_topk(query: &[f64], table: &EmbeddingTable, candidates: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Config("top-k needs k ≥ 1".into()));
    }
    ExactCosineIndex::new(table, candidates).topk(query, k)
}

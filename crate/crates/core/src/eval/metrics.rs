use crate::error::{Error, Result};

fn check(n_rank: usize, n_truth: usize) -> Result<()> {
    if n_rank == 0 {
        return Err(Error::EmptyUsers);
    }
    if n_rank != n_truth {
        return Err(Error::Shape {
            op: "metric inputs",
            lhs: (n_rank, 1),
            rhs: (n_truth, 1),
        });
    }
    Ok(())
}

/// Fraction of users whose relevant item is in their top `k`.
pub fn hitrate_at_k(rankings: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    check(rankings.len(), truth.len())?;
    let hits = rankings.iter().zip(truth).filter(|(r, t)| r.iter().take(k).any(|i| i == *t)).count();
    Ok(hits as f64 / rankings.len() as f64)
}

fn per_user<F: Fn(&[usize], &[usize]) -> f64>(rankings: &[Vec<usize>], truth: &[Vec<usize>], f: F) -> Result<f64> {
    check(rankings.len(), truth.len())?;
    let mut total = 0.0;
    for (u, (r, t)) in rankings.iter().zip(truth).enumerate() {
        if t.is_empty() {
            return Err(Error::EmptyTruth(u));
        }
        total += f(r, t);
    }
    Ok(total / rankings.len() as f64)
}

pub(crate) fn recall_one(ranking: &[usize], truth: &[usize], k: usize) -> f64 {
    let found = truth.iter().filter(|t| ranking.iter().take(k).any(|i| i == *t)).count();
    found as f64 / truth.len() as f64
}

pub(crate) fn ndcg_one(ranking: &[usize], truth: &[usize], k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| truth.contains(i))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean over users of the fraction of their relevant items in the top `k`.
pub fn recall_at_k(rankings: &[Vec<usize>], truth: &[Vec<usize>], k: usize) -> Result<f64> {
    per_user(rankings, truth, |r, t| recall_one(r, t, k))
}

/// Mean over users of DCG@k / ideal DCG@k with binary relevance.
pub fn ndcg_at_k(rankings: &[Vec<usize>], truth: &[Vec<usize>], k: usize) -> Result<f64> {
    per_user(rankings, truth, |r, t| ndcg_one(r, t, k))
}

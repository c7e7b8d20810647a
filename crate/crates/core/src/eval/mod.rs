//! Cosine retrieval and offline ranking metrics.

mod index;
mod metrics;
mod split;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use index::{cosine_topk, ExactCosineIndex, VectorIndex};
pub use metrics::{hitrate_at_k, ndcg_at_k, recall_at_k};
pub use split::chronological_split;

use crate::error::{Error, Result};
use crate::model::EmbeddingTable;
use crate::rng::{mix, rng, stream};

/// How many non-interacted items join each user's candidate list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NegRepr", into = "NegRepr")]
pub enum Negatives {
    Sampled(usize),
    /// Every non-interacted item: full-corpus ranking.
    All,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NegRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<NegRepr> for Negatives {
    type Error = String;
    fn try_from(r: NegRepr) -> std::result::Result<Self, String> {
        match r {
            NegRepr::Count(n) => Ok(Negatives::Sampled(n)),
            NegRepr::Word(w) if w == "all" => Ok(Negatives::All),
            NegRepr::Word(w) => Err(format!("negatives_per_user must be a count or \"all\", got {w:?}")),
        }
    }
}

impl From<Negatives> for NegRepr {
    fn from(n: Negatives) -> Self {
        match n {
            Negatives::Sampled(c) => NegRepr::Count(c),
            Negatives::All => NegRepr::Word("all".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub k_values: Vec<usize>,
    pub negatives_per_user: Negatives,
    pub split: [f64; 3],
    pub rng_seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            k_values: vec![1, 5, 10, 20],
            negatives_per_user: Negatives::Sampled(99),
            split: [0.8, 0.1, 0.1],
            rng_seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::Config("eval.k_values must be nonempty and positive".into()));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("eval.k_values must be strictly ascending".into()));
        }
        if self.split.iter().any(|&f| !(f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("eval.split {:?} must be nonnegative and sum to 1", self.split)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub hitrate: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<KMetrics>,
    pub n_users: usize,
    /// Users with too few non-interacted items for the sampled protocol.
    pub n_skipped: usize,
    /// Users whose query row is zero or missing; scored as misses.
    pub n_unrankable: usize,
    pub wall_ms: f64,
    pub table_version: u64,
    pub embedding_refresh_latency_ms: Option<i64>,
    /// `(user, rank of the first relevant item)`, 1-based; `None` when absent.
    #[serde(skip)]
    pub ranks: Vec<(usize, Option<usize>)>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }

    /// `user_index,rank_of_positive` lines, empty rank when not retrieved.
    pub fn ranks_csv(&self) -> String {
        let mut s = String::from("user_index,rank_of_positive\n");
        for (u, r) in &self.ranks {
            s.push_str(&format!("{u},{}\n", r.map(|r| r.to_string()).unwrap_or_default()));
        }
        s
    }
}

/// What the evaluator needs besides the table.
pub struct EvalData<'a> {
    /// Global indices of all rankable items.
    pub items: &'a [usize],
    /// Held-out `(user, item)` interactions.
    pub test: &'a [(usize, usize)],
    /// Every known `(user, item)` interaction, test ones included; these are
    /// never drawn as negatives.
    pub interacted: &'a HashSet<(usize, usize)>,
}

struct UserResult {
    user: usize,
    ranking: Vec<usize>,
    truth: Vec<usize>,
    unrankable: bool,
}

/// Ranks each test user's candidates by cosine and averages the metrics.
///
/// Sampled mode uses the user's first test item as the single positive plus
/// `n` negatives drawn per user from `hash(seed, user)`. `All` mode ranks the
/// user's test items against every non-interacted item.
pub fn evaluate(table: &EmbeddingTable, data: &EvalData<'_>, protocol: &EvalProtocol) -> Result<EvalReport> {
    let start = Instant::now();
    protocol.validate()?;
    let mut by_user: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, i) in data.test {
        let e = by_user.entry(u).or_default();
        if !e.contains(&i) {
            e.push(i);
        }
    }
    if by_user.is_empty() {
        return Err(Error::EmptyUsers);
    }
    let kmax = *protocol.k_values.last().expect("validated nonempty");
    let users: Vec<(usize, Vec<usize>)> = by_user.into_iter().collect();

    let one = |u: usize, tests: &[usize]| -> Option<UserResult> {
        let negs: Vec<usize> = data.items.iter().copied().filter(|&i| !data.interacted.contains(&(u, i))).collect();
        let (mut cand, truth) = match protocol.negatives_per_user {
            Negatives::Sampled(n) => {
                if negs.len() < n {
                    return None;
                }
                let mut r = rng(mix(protocol.rng_seed, u as u64), stream::EVAL);
                let mut pick = sample(&mut r, negs.len(), n).into_vec();
                pick.sort_unstable();
                let mut c: Vec<usize> = pick.into_iter().map(|p| negs[p]).collect();
                c.push(tests[0]);
                (c, vec![tests[0]])
            }
            Negatives::All => {
                let mut c = negs;
                c.extend_from_slice(tests);
                (c, tests.to_vec())
            }
        };
        cand.sort_unstable();
        cand.dedup();
        let ranking = if u < table.len() {
            ExactCosineIndex::new(table, &cand).topk(table.row(u), kmax)
        } else {
            Err(Error::UnrankableQuery)
        };
        Some(match ranking {
            Ok(r) => UserResult {
                user: u,
                ranking: r.into_iter().map(|x| x.0).collect(),
                truth,
                unrankable: false,
            },
            Err(_) => UserResult {
                user: u,
                ranking: Vec::new(),
                truth,
                unrankable: true,
            },
        })
    };

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(users.len()).max(1);
    let chunk = users.len().div_ceil(threads);
    let results: Vec<Option<UserResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = users
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|(u, t)| one(*u, t)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });

    let n_skipped = results.iter().filter(|r| r.is_none()).count();
    let done: Vec<UserResult> = results.into_iter().flatten().collect();
    if done.is_empty() {
        return Err(Error::EmptyUsers);
    }
    let rankings: Vec<Vec<usize>> = done.iter().map(|r| r.ranking.clone()).collect();
    let truth: Vec<Vec<usize>> = done.iter().map(|r| r.truth.clone()).collect();
    let mut out = Vec::with_capacity(protocol.k_values.len());
    for &k in &protocol.k_values {
        let hits = rankings
            .iter()
            .zip(&truth)
            .filter(|(r, t)| r.iter().take(k).any(|i| t.contains(i)))
            .count();
        out.push(KMetrics {
            k,
            hitrate: hits as f64 / done.len() as f64,
            recall: recall_at_k(&rankings, &truth, k)?,
            ndcg: ndcg_at_k(&rankings, &truth, k)?,
        });
    }
    let ranks = done
        .iter()
        .map(|r| (r.user, r.ranking.iter().position(|i| r.truth.contains(i)).map(|p| p + 1)))
        .collect();
    Ok(EvalReport {
        metrics: out,
        n_users: done.len(),
        n_skipped,
        n_unrankable: done.iter().filter(|r| r.unrankable).count(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        table_version: table.version,
        embedding_refresh_latency_ms: None,
        ranks,
    })
}

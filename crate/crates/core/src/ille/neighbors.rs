use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::rng::{rng, stream};

/// Exactly `k` neighbors of `center` (global indices), hop-1 first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborSample {
    pub center: usize,
    pub neighbors: Vec<usize>,
    /// 1 or 2 per entry of `neighbors`.
    pub hop_labels: Vec<u8>,
}

fn pick(r: &mut impl Rng, from: &[usize], n: usize) -> Vec<usize> {
    let mut idx = index::sample(r, from.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| from[i]).collect()
}

/// BFS neighbor selection over the type-erased undirected graph: hop-1
/// neighbors first, then hop-2, then uniform repeats of what was collected.
pub fn bfs_neighbors(graph: &HeteroGraph, center: usize, k: usize, rng_seed: u64) -> Result<NeighborSample> {
    if center >= graph.num_nodes() {
        return Err(Error::UnknownNode(usize::MAX, center));
    }
    let k = k.max(1);
    let hop1 = graph.neighbors(center);
    if hop1.is_empty() {
        return Err(Error::ColdIsolated(center));
    }
    let mut r = rng(rng_seed, stream::BFS.wrapping_add(center as u64));
    if hop1.len() >= k {
        let neighbors = pick(&mut r, hop1, k);
        return Ok(NeighborSample {
            center,
            neighbors,
            hop_labels: vec![1; k],
        });
    }
    let mut neighbors = hop1.to_vec();
    let mut hop_labels = vec![1u8; hop1.len()];
    let mut hop2: Vec<usize> = hop1
        .iter()
        .flat_map(|&h| graph.neighbors(h).iter().copied())
        .filter(|&v| v != center && hop1.binary_search(&v).is_err())
        .collect();
    hop2.sort_unstable();
    hop2.dedup();
    let need = k - neighbors.len();
    if hop2.len() >= need {
        neighbors.extend(pick(&mut r, &hop2, need));
        hop_labels.extend(std::iter::repeat_n(2, need));
    } else {
        neighbors.extend(&hop2);
        hop_labels.extend(std::iter::repeat_n(2, hop2.len()));
        let distinct = neighbors.len();
        while neighbors.len() < k {
            let i = r.random_range(0..distinct);
            neighbors.push(neighbors[i]);
            hop_labels.push(hop_labels[i]);
        }
    }
    Ok(NeighborSample {
        center,
        neighbors,
        hop_labels,
    })
}

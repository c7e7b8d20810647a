use std::collections::HashMap;

use rand::seq::{index, SliceRandom};

use super::HeteroGraph;
use crate::error::{Error, Result};
use crate::rng::{rng, stream};

/// Shuffled partition of every global node index into chunks of `batch_size`.
pub fn minibatch_partition(graph: &HeteroGraph, batch_size: usize, rng_seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
    order.shuffle(&mut rng(rng_seed, stream::PARTITION));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Seeds plus their degree-limited one-hop neighborhoods.
///
/// Local indices put the seeds first, in the order given, followed by sampled
/// neighbors in discovery order.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub seeds: Vec<usize>,
    pub nodes: Vec<usize>,
    local: HashMap<usize, usize>,
    /// `(src_local, dst_local, relation)`; each graph edge appears at most once.
    pub edges: Vec<(usize, usize, usize)>,
    pub degree_limit: usize,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_of(&self, global: usize) -> Option<usize> {
        self.local.get(&global).copied()
    }

    pub fn global_of(&self, local: usize) -> usize {
        self.nodes[local]
    }

    /// Every node with all of its edges, no sampling; used for small graphs and tests.
    pub fn full(graph: &HeteroGraph) -> Subgraph {
        let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
        let local = nodes.iter().map(|&g| (g, g)).collect();
        let edges = graph.edges().iter().map(|e| (e.src, e.dst, e.relation)).collect();
        Subgraph {
            seeds: nodes.clone(),
            nodes,
            local,
            edges,
            degree_limit: usize::MAX,
        }
    }

    /// Reorders local indices by `perm` (new local `i` holds old local `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Subgraph {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let nodes: Vec<usize> = perm.iter().map(|&old| self.nodes[old]).collect();
        let local = nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        Subgraph {
            seeds: self.seeds.clone(),
            nodes,
            local,
            edges: self.edges.iter().map(|&(s, d, r)| (inv[s], inv[d], r)).collect(),
            degree_limit: self.degree_limit,
        }
    }
}

/// For each seed and relation keeps every neighbor when there are at most
/// `degree_limit`, otherwise a uniform sample of exactly `degree_limit`.
///
/// The per-seed draw depends only on `(rng_seed, seed index)`, so a node's
/// neighborhood does not depend on which batch it lands in.
pub fn sample_subgraph(graph: &HeteroGraph, seeds: &[usize], degree_limit: usize, rng_seed: u64) -> Result<Subgraph> {
    let degree_limit = degree_limit.max(1);
    let mut nodes = Vec::with_capacity(seeds.len());
    let mut local: HashMap<usize, usize> = HashMap::with_capacity(seeds.len());
    for &s in seeds {
        if s >= graph.num_nodes() {
            return Err(Error::UnknownNode(usize::MAX, s));
        }
        if !local.contains_key(&s) {
            local.insert(s, nodes.len());
            nodes.push(s);
        }
    }
    let mut edges = Vec::new();
    let mut seen_edges = std::collections::HashSet::new();
    let seed_list: Vec<usize> = nodes.clone();

    for &s in &seed_list {
        let adj = graph.adjacency(s);
        let mut r = rng(rng_seed, stream::SUBGRAPH.wrapping_add(s as u64));
        let mut start = 0;
        while start < adj.len() {
            let rel = adj[start].relation;
            let end = start + adj[start..].iter().take_while(|a| a.relation == rel).count();
            // distinct neighbors under this relation, with their entry ranges
            let mut groups: Vec<(usize, usize, usize)> = Vec::new();
            let mut i = start;
            while i < end {
                let nbr = adj[i].nbr;
                let j = i + adj[i..end].iter().take_while(|a| a.nbr == nbr).count();
                groups.push((nbr, i, j));
                i = j;
            }
            let chosen: Vec<usize> = if groups.len() <= degree_limit {
                (0..groups.len()).collect()
            } else {
                let mut pick = index::sample(&mut r, groups.len(), degree_limit).into_vec();
                pick.sort_unstable();
                pick
            };
            for gi in chosen {
                let (nbr, a, b) = groups[gi];
                let nl = *local.entry(nbr).or_insert_with(|| {
                    nodes.push(nbr);
                    nodes.len() - 1
                });
                let sl = local[&s];
                for entry in &adj[a..b] {
                    let (src, dst) = if entry.outgoing { (sl, nl) } else { (nl, sl) };
                    let key = (nodes[src], nodes[dst], rel);
                    if seen_edges.insert(key) {
                        edges.push((src, dst, rel));
                    }
                }
            }
            start = end;
        }
    }
    Ok(Subgraph {
        seeds: seed_list,
        nodes,
        local,
        edges,
        degree_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_graph, RelationSchema};

    fn star(n_leaves: usize) -> HeteroGraph {
        let mut edges = String::new();
        for i in 0..n_leaves {
            edges.push_str(&format!("0\t0\t1\t{i}\t0\t\n"));
        }
        edges.push_str("0\t1\t1\t0\t0\t\n");
        load_graph(edges.as_bytes(), "0\t2\t\n".as_bytes(), RelationSchema::new(2, vec![(0, 1)])).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let g = star(7); // 3 users + 7 ads
        assert_eq!(g.num_nodes(), 10);
        let parts = minibatch_partition(&g, 3, 5);
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(minibatch_partition(&g, 3, 5), parts);
    }

    #[test]
    fn partition_clamps() {
        let g = star(1);
        assert_eq!(g.num_nodes(), 4);
        let parts = minibatch_partition(&g, 100, 1);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 4);
    }

    #[test]
    fn degree_under_limit_keeps_all() {
        let g = star(4);
        let sub = sample_subgraph(&g, &[0], 10, 3).unwrap();
        assert_eq!(sub.len(), 5);
        assert_eq!(sub.edges.len(), 4);
    }

    #[test]
    fn degree_over_limit_samples_exactly() {
        let g = star(20);
        let sub = sample_subgraph(&g, &[0], 10, 3).unwrap();
        assert_eq!(sub.len(), 11);
        let mut nbrs: Vec<usize> = sub.edges.iter().map(|e| sub.global_of(e.1)).collect();
        nbrs.sort_unstable();
        nbrs.dedup();
        assert_eq!(nbrs.len(), 10);
        for &(s, d, r) in &sub.edges {
            assert!(g.has_edge(sub.global_of(s), sub.global_of(d), r));
        }
        assert_eq!(sample_subgraph(&g, &[0], 10, 3).unwrap(), sub);
    }

    #[test]
    fn isolated_seed() {
        let g = star(3);
        let isolated = g.index_of(crate::graph::NodeRef::new(0, 2)).unwrap();
        let sub = sample_subgraph(&g, &[isolated], 10, 0).unwrap();
        assert_eq!(sub.nodes, vec![isolated]);
        assert!(sub.edges.is_empty());
    }

    #[test]
    fn unknown_seed() {
        let g = star(3);
        assert!(sample_subgraph(&g, &[99], 10, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_is_disjoint_cover(v in 0usize..300, batch in 1usize..50, seed: u64) {
                let mut feats = String::new();
                for i in 0..v { feats.push_str(&format!("0\t{i}\t\n")); }
                let g = load_graph("".as_bytes(), feats.as_bytes(), RelationSchema::new(1, vec![])).unwrap();
                let parts = minibatch_partition(&g, batch, seed);
                for (i, p) in parts.iter().enumerate() {
                    if i + 1 < parts.len() { prop_assert_eq!(p.len(), batch); }
                    else { prop_assert!(!p.is_empty() && p.len() <= batch); }
                }
                let mut all = parts.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..v).collect::<Vec<_>>());
            }

            #[test]
            fn sampling_respects_limit(
                pairs in proptest::collection::vec((0usize..6, 0usize..25), 1..120),
                limit in 1usize..8,
                seed: u64,
            ) {
                let mut edges = String::new();
                for (u, i) in &pairs {
                    edges.push_str(&format!("0\t{u}\t1\t{i}\t0\t\n1\t{i}\t0\t{u}\t1\t\n"));
                }
                let mut feats = String::new();
                for u in 0..6 { feats.push_str(&format!("0\t{u}\t\n")); }
                for i in 0..25 { feats.push_str(&format!("1\t{i}\t\n")); }
                let g = load_graph(edges.as_bytes(), feats.as_bytes(),
                    RelationSchema::new(2, vec![(0, 1), (1, 0)])).unwrap();
                let seeds: Vec<usize> = (0..6).collect();
                let sub = sample_subgraph(&g, &seeds, limit, seed).unwrap();
                for &(s, d, r) in &sub.edges {
                    prop_assert!(g.has_edge(sub.global_of(s), sub.global_of(d), r));
                }
                for &s in &seeds {
                    let sl = sub.local_of(s).unwrap();
                    for r in 0..2 {
                        let mut nb: Vec<usize> = sub.edges.iter()
                            .filter(|e| e.2 == r && (e.0 == sl || e.1 == sl))
                            .map(|e| if e.0 == sl { e.1 } else { e.0 })
                            .filter(|&n| !seeds.contains(&sub.global_of(n)))
                            .collect();
                        nb.sort_unstable();
                        nb.dedup();
                        prop_assert!(nb.len() <= limit);
                    }
                }
                for l in seeds.len()..sub.len() {
                    let g_node = sub.global_of(l);
                    prop_assert!(seeds.iter().any(|&s| g.adjacent(s, g_node)));
                }
            }
        }
    }
}

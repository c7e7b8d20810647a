//! Synthetic workloads shared by the criterion benches and the scaling
//! acceptance check.

use dhge_core::graph::{Edge, NewEdge, NewNode};
use dhge_core::model::{ModelConfig, ModelDims, ModelParams};
use dhge_core::{HeteroGraph, IncrementBatch, Matrix, NodeRef, RelationSchema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const USER: usize = 0;
pub const ITEM: usize = 1;

/// User/item bipartite graph, two types and both edge directions, with
/// `avg_degree` clicks per user drawn uniformly over items. Node count is
/// `users + items`; directed edge count about `2 · users · avg_degree`.
pub fn bipartite(users: usize, items: usize, avg_degree: usize, feature_dim: usize, seed: u64) -> HeteroGraph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let schema = RelationSchema::new(2, vec![(USER, ITEM), (ITEM, USER)]);
    let v = users + items;
    let feats: Vec<f64> = (0..v * feature_dim).map(|_| r.random::<f64>() - 0.5).collect();
    let features = Matrix::from_vec(v, feature_dim, feats).expect("shape");
    let mut edges = Vec::with_capacity(2 * users * avg_degree);
    for u in 0..users {
        let mut picked = Vec::with_capacity(avg_degree);
        while picked.len() < avg_degree.min(items) {
            let i = r.random_range(0..items);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        for i in picked {
            edges.push(Edge { src: u, dst: users + i, relation: 0, timestamp: 0 });
            edges.push(Edge { src: users + i, dst: u, relation: 1, timestamp: 0 });
        }
    }
    HeteroGraph::from_parts(schema, &[users, items], features, vec![false; v * feature_dim], edges)
}

/// `n_new` fresh users, each clicking `degree` existing items.
pub fn new_users(graph: &HeteroGraph, n_new: usize, degree: usize, seed: u64) -> IncrementBatch {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (users, items) = (graph.type_count(USER), graph.type_count(ITEM));
    let dim = graph.feature_dim();
    let mut batch = IncrementBatch { batch_time: 1, ..Default::default() };
    for n in 0..n_new {
        let u = NodeRef::new(USER, users + n);
        let row: Vec<f64> = (0..dim).map(|_| r.random::<f64>() - 0.5).collect();
        batch.new_nodes.push(NewNode { node: u, features: Some((row, vec![false; dim])) });
        let mut picked = Vec::with_capacity(degree);
        while picked.len() < degree.min(items) {
            let i = r.random_range(0..items);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        for i in picked {
            let it = NodeRef::new(ITEM, i);
            batch.new_edges.push(NewEdge { src: u, dst: it, relation: 0, timestamp: 1 });
            batch.new_edges.push(NewEdge { src: it, dst: u, relation: 1, timestamp: 1 });
        }
    }
    batch
}

/// Freshly initialized parameters sized for `graph` (and room for growth).
pub fn model(graph: &HeteroGraph, hidden_dim: usize) -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig {
        hidden_dim,
        input_dim: graph.feature_dim(),
        num_gcn_layers: 2,
        ..ModelConfig::default()
    };
    let dims = ModelDims {
        input_dim: graph.feature_dim(),
        hidden_dim,
        num_types: graph.num_types(),
        num_relations: graph.num_relations(),
        num_gcn_layers: cfg.num_gcn_layers,
    };
    let params = ModelParams::init(&cfg, dims, graph.max_type_count()).expect("valid dims");
    (cfg, params)
}

/// Random `n × d` points, for the weight-solve kernels.
pub fn points(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(n, d, (0..n * d).map(|_| r.random::<f64>()).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bipartite_counts() {
        let g = bipartite(50, 20, 4, 3, 1);
        assert_eq!(g.num_nodes(), 70);
        assert_eq!(g.num_edges(), 2 * 50 * 4);
        assert!(dhge_core::graph::validate(&g).is_empty());
    }

    #[test]
    fn batch_applies() {
        let g = bipartite(50, 20, 4, 3, 1);
        let b = new_users(&g, 5, 3, 2);
        let g2 = dhge_core::graph::apply_increment(&g, &b).unwrap();
        assert_eq!(g2.type_count(USER), 55);
        assert_eq!(g2.num_edges(), g.num_edges() + 30);
    }
}

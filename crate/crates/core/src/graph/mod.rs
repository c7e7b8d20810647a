//! Heterogeneous graph storage, loading, sampling, and increments.

mod increment;
mod io;
mod sampling;
mod validate;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use increment::{apply_increment, read_increment, IncrementBatch, NewEdge, NewNode};
pub use io::{
    load_graph, load_graph_files, load_graph_ordered, load_graph_with_stats, parse_schema, read_edge_records,
    write_edges, write_features, write_schema, EdgeRecord, LoadStats,
};
pub use sampling::{minibatch_partition, sample_subgraph, Subgraph};
pub use validate::{validate, Violation};

use crate::numcore::Matrix;

/// A node addressed by its type and its id within that type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_type: usize,
    pub intra_id: usize,
}

impl NodeRef {
    pub fn new(node_type: usize, intra_id: usize) -> Self {
        NodeRef {
            node_type,
            intra_id,
        }
    }
}

/// A directed typed edge between global node indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub relation: usize,
    pub timestamp: i64,
}

/// Relation id → (source type, target type).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RelationSchema {
    pub num_types: usize,
    pub relations: Vec<(usize, usize)>,
}

impl RelationSchema {
    pub fn new(num_types: usize, relations: Vec<(usize, usize)>) -> Self {
        RelationSchema {
            num_types,
            relations,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct AdjEntry {
    pub relation: usize,
    pub nbr: usize,
    pub outgoing: bool,
}

/// Typed nodes and edges with a feature matrix and explicit missingness.
///
/// Nodes loaded from files are laid out type-major with ascending intra ids.
/// Nodes added by increments are appended after all existing indices, so a
/// global index never moves once assigned.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    schema: RelationSchema,
    nodes: Vec<NodeRef>,
    by_type: Vec<Vec<usize>>,
    features: Matrix,
    missing: Vec<bool>,
    edges: Vec<Edge>,
    edge_set: HashSet<(usize, usize, usize)>,
    adj: Vec<Vec<AdjEntry>>,
    undirected: Vec<Vec<usize>>,
}

impl PartialEq for HeteroGraph {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.nodes == other.nodes
            && self.features == other.features
            && self.missing == other.missing
            && self.edges == other.edges
    }
}

impl HeteroGraph {
    /// Assembles a graph without validating edges. Nodes are laid out
    /// type-major from `counts`. Use [`validate`] to inspect the result.
    pub fn from_parts(
        schema: RelationSchema,
        counts: &[usize],
        features: Matrix,
        missing: Vec<bool>,
        edges: Vec<Edge>,
    ) -> Self {
        let mut nodes = Vec::new();
        let mut by_type = vec![Vec::new(); schema.num_types.max(counts.len())];
        for (t, &n) in counts.iter().enumerate() {
            for i in 0..n {
                by_type[t].push(nodes.len());
                nodes.push(NodeRef::new(t, i));
            }
        }
        let mut g = HeteroGraph {
            schema,
            nodes,
            by_type,
            features,
            missing,
            edges: Vec::new(),
            edge_set: HashSet::new(),
            adj: Vec::new(),
            undirected: Vec::new(),
        };
        g.adj = vec![Vec::new(); g.nodes.len()];
        g.undirected = vec![Vec::new(); g.nodes.len()];
        g.extend_edges(edges);
        g
    }

    /// Like [`HeteroGraph::from_parts`] with an explicit global node order;
    /// intra ids of each type must appear in ascending order.
    pub(crate) fn from_ordered(schema: RelationSchema, nodes: Vec<NodeRef>, features: Matrix, missing: Vec<bool>, edges: Vec<Edge>) -> Self {
        let mut by_type = vec![Vec::new(); schema.num_types];
        for (g, n) in nodes.iter().enumerate() {
            debug_assert_eq!(by_type[n.node_type].len(), n.intra_id);
            by_type[n.node_type].push(g);
        }
        let v = nodes.len();
        let mut g = HeteroGraph {
            schema,
            nodes,
            by_type,
            features,
            missing,
            edges: Vec::new(),
            edge_set: HashSet::new(),
            adj: vec![Vec::new(); v],
            undirected: vec![Vec::new(); v],
        };
        g.extend_edges(edges);
        g
    }

    pub(crate) fn extend_edges(&mut self, edges: Vec<Edge>) {
        let mut touched = Vec::new();
        for e in edges {
            self.edge_set.insert((e.src, e.dst, e.relation));
            if e.src < self.adj.len() && e.dst < self.adj.len() {
                self.adj[e.src].push(AdjEntry {
                    relation: e.relation,
                    nbr: e.dst,
                    outgoing: true,
                });
                self.adj[e.dst].push(AdjEntry {
                    relation: e.relation,
                    nbr: e.src,
                    outgoing: false,
                });
                self.undirected[e.src].push(e.dst);
                self.undirected[e.dst].push(e.src);
                touched.push(e.src);
                touched.push(e.dst);
            }
            self.edges.push(e);
        }
        touched.sort_unstable();
        touched.dedup();
        for v in touched {
            self.adj[v].sort_unstable();
            self.undirected[v].sort_unstable();
            self.undirected[v].dedup();
        }
    }

    pub(crate) fn push_node(&mut self, node: NodeRef, feats: &[f64], mask: &[bool]) -> usize {
        let g = self.nodes.len();
        self.nodes.push(node);
        if self.by_type.len() <= node.node_type {
            self.by_type.resize(node.node_type + 1, Vec::new());
        }
        self.by_type[node.node_type].push(g);
        let extra = Matrix::from_vec(1, feats.len(), feats.to_vec()).expect("finite features");
        self.features.push_rows(&extra);
        self.missing.extend_from_slice(mask);
        self.adj.push(Vec::new());
        self.undirected.push(Vec::new());
        g
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn num_types(&self) -> usize {
        self.schema.num_types
    }

    pub fn num_relations(&self) -> usize {
        self.schema.relations.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn type_count(&self, t: usize) -> usize {
        self.by_type.get(t).map_or(0, Vec::len)
    }

    pub fn type_counts(&self) -> Vec<usize> {
        (0..self.num_types()).map(|t| self.type_count(t)).collect()
    }

    /// Largest per-type node count.
    pub fn max_type_count(&self) -> usize {
        self.by_type.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node(&self, global: usize) -> NodeRef {
        self.nodes[global]
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn index_of(&self, node: NodeRef) -> Option<usize> {
        self.by_type.get(node.node_type)?.get(node.intra_id).copied()
    }

    /// Global indices of all nodes of type `t`, in intra-id order.
    pub fn nodes_of_type(&self, t: usize) -> &[usize] {
        self.by_type.get(t).map_or(&[], Vec::as_slice)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, src: usize, dst: usize, relation: usize) -> bool {
        self.edge_set.contains(&(src, dst, relation))
    }

    /// Distinct neighbors of `v` over all relations and both directions.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.undirected[v]
    }

    /// True if any edge joins `a` and `b` in either direction.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.undirected[a].binary_search(&b).is_ok()
    }

    pub(crate) fn adjacency(&self, v: usize) -> &[AdjEntry] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.undirected[v].len()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// 3 users (type 0), 2 ads (type 1); relation 0 user→ad, relation 1 ad→user.
    pub fn tiny() -> HeteroGraph {
        let edges = "# src_type src dst_type dst rel ts\n\
                     0\t0\t1\t0\t0\t10\n\
                     0\t1\t1\t0\t0\t11\n\
                     0\t1\t1\t1\t0\t12\n\
                     0\t2\t1\t1\t0\t\n";
        let feats = "0\t0\t1.0,2.0\n0\t1\t,3.5\n1\t0\t0.5,\n1\t1\t-1,1\n";
        let schema = RelationSchema::new(2, vec![(0, 1), (1, 0)]);
        load_graph(edges.as_bytes(), feats.as_bytes(), schema).unwrap()
    }
}

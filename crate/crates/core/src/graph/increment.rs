use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use super::io::{check_edge, read_edge_records, read_feature_records};
use super::{Edge, HeteroGraph, NodeRef};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NewNode {
    pub node: NodeRef,
    /// Raw feature row and its missing mask; `None` means fully missing.
    pub features: Option<(Vec<f64>, Vec<bool>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NewEdge {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub relation: usize,
    pub timestamp: i64,
}

/// A timestamped batch of new nodes and edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IncrementBatch {
    pub new_nodes: Vec<NewNode>,
    pub new_edges: Vec<NewEdge>,
    pub batch_time: i64,
}

impl IncrementBatch {
    pub fn is_empty(&self) -> bool {
        self.new_nodes.is_empty() && self.new_edges.is_empty()
    }

    /// Concatenation of two batches, `self` first.
    pub fn concat(&self, other: &IncrementBatch) -> IncrementBatch {
        IncrementBatch {
            new_nodes: self.new_nodes.iter().chain(&other.new_nodes).cloned().collect(),
            new_edges: self.new_edges.iter().chain(&other.new_edges).copied().collect(),
            batch_time: self.batch_time.max(other.batch_time),
        }
    }
}

/// Returns the graph extended by `batch`. Existing global indices are unchanged;
/// new nodes are appended in batch order. Edges already present are skipped.
pub fn apply_increment(graph: &HeteroGraph, batch: &IncrementBatch) -> Result<HeteroGraph> {
    let mut out = graph.clone();
    let dim = graph.feature_dim();
    let mut next: Vec<usize> = graph.type_counts();
    for n in &batch.new_nodes {
        let t = n.node.node_type;
        if t >= graph.num_types() {
            return Err(Error::UnknownNodeType {
                node_type: t,
                num_types: graph.num_types(),
            });
        }
        if n.node.intra_id < next[t] {
            return Err(Error::IdCollision(t, n.node.intra_id));
        }
        if n.node.intra_id > next[t] {
            return Err(Error::IdGap {
                node_type: t,
                missing: next[t],
            });
        }
        next[t] += 1;
        let (vals, mask) = match &n.features {
            Some((v, m)) if v.len() == dim && m.len() == dim => (v.clone(), m.clone()),
            Some((v, _)) => {
                return Err(Error::Shape {
                    op: "increment features",
                    lhs: (1, v.len()),
                    rhs: (1, dim),
                })
            }
            None => (vec![0.0; dim], vec![true; dim]),
        };
        out.push_node(n.node, &vals, &mask);
    }

    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(batch.new_edges.len());
    for e in &batch.new_edges {
        check_edge(out.schema(), e.src, e.dst, e.relation)?;
        let src = out
            .index_of(e.src)
            .ok_or(Error::DanglingEndpoint(e.src.node_type, e.src.intra_id))?;
        let dst = out
            .index_of(e.dst)
            .ok_or(Error::DanglingEndpoint(e.dst.node_type, e.dst.intra_id))?;
        if out.has_edge(src, dst, e.relation) || !seen.insert((src, dst, e.relation)) {
            continue;
        }
        edges.push(Edge {
            src,
            dst,
            relation: e.relation,
            timestamp: e.timestamp,
        });
    }
    out.extend_edges(edges);
    Ok(out)
}

/// Builds a batch from increment files against the current graph: any node id
/// at or beyond its type's current count is new.
pub fn read_increment<E: BufRead, F: BufRead>(graph: &HeteroGraph, edges: E, features: Option<F>) -> Result<IncrementBatch> {
    let recs = read_edge_records(edges, "increment edges")?;
    let feats = match features {
        Some(f) => read_feature_records(f, "increment features")?,
        None => Vec::new(),
    };
    let mut fresh: BTreeMap<NodeRef, Option<(Vec<f64>, Vec<bool>)>> = BTreeMap::new();
    let is_new = |n: NodeRef| n.intra_id >= graph.type_count(n.node_type);
    for r in &recs {
        for n in [r.src, r.dst] {
            if is_new(n) {
                fresh.entry(n).or_insert(None);
            }
        }
    }
    for f in feats {
        if is_new(f.node) {
            fresh.insert(f.node, Some((f.values, f.missing)));
        }
    }
    let batch_time = recs.iter().filter_map(|r| r.timestamp).max().unwrap_or(0);
    Ok(IncrementBatch {
        new_nodes: fresh
            .into_iter()
            .map(|(node, features)| NewNode { node, features })
            .collect(),
        new_edges: recs
            .iter()
            .map(|r| NewEdge {
                src: r.src,
                dst: r.dst,
                relation: r.relation,
                timestamp: r.timestamp.unwrap_or(0),
            })
            .collect(),
        batch_time,
    })
}

use std::collections::HashSet;
use std::fmt;

use super::{HeteroGraph, NodeRef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateEdge { src: NodeRef, dst: NodeRef, relation: usize },
    SchemaMismatch { relation: usize, src_type: usize, dst_type: usize },
    UnknownRelation { relation: usize },
    SelfLoop { node: NodeRef },
    EndpointOutOfRange { index: usize },
    FeatureRows { expected: usize, got: usize },
    MaskLength { expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateEdge { src, dst, relation } => write!(
                f,
                "duplicate edge ({},{}) -> ({},{}) relation {relation}",
                src.node_type, src.intra_id, dst.node_type, dst.intra_id
            ),
            Violation::SchemaMismatch {
                relation,
                src_type,
                dst_type,
            } => write!(f, "relation {relation} edge joins types {src_type} -> {dst_type}"),
            Violation::UnknownRelation { relation } => write!(f, "unknown relation {relation}"),
            Violation::SelfLoop { node } => write!(f, "self-loop on ({},{})", node.node_type, node.intra_id),
            Violation::EndpointOutOfRange { index } => write!(f, "edge endpoint {index} out of range"),
            Violation::FeatureRows { expected, got } => write!(f, "feature rows {got}, expected {expected}"),
            Violation::MaskLength { expected, got } => write!(f, "mask length {got}, expected {expected}"),
        }
    }
}

/// Lists every invariant violation; an empty list means the graph is valid.
pub fn validate(graph: &HeteroGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = graph.num_nodes();
    if graph.features().rows() != v {
        out.push(Violation::FeatureRows {
            expected: v,
            got: graph.features().rows(),
        });
    }
    let want_mask = graph.features().rows() * graph.feature_dim();
    if graph.missing_mask().len() != want_mask {
        out.push(Violation::MaskLength {
            expected: want_mask,
            got: graph.missing_mask().len(),
        });
    }
    let mut seen = HashSet::new();
    for e in graph.edges() {
        if e.src >= v || e.dst >= v {
            out.push(Violation::EndpointOutOfRange { index: e.src.max(e.dst) });
            continue;
        }
        let (s, d) = (graph.node(e.src), graph.node(e.dst));
        match graph.schema().relations.get(e.relation) {
            None => out.push(Violation::UnknownRelation { relation: e.relation }),
            Some(&(st, dt)) if (st, dt) != (s.node_type, d.node_type) => out.push(Violation::SchemaMismatch {
                relation: e.relation,
                src_type: s.node_type,
                dst_type: d.node_type,
            }),
            _ => {}
        }
        if e.src == e.dst {
            out.push(Violation::SelfLoop { node: s });
        }
        if !seen.insert((e.src, e.dst, e.relation)) {
            out.push(Violation::DuplicateEdge {
                src: s,
                dst: d,
                relation: e.relation,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::tiny;
    use crate::graph::{Edge, HeteroGraph};

    fn rebuild_with(extra: Edge) -> HeteroGraph {
        let g = tiny();
        let mut edges = g.edges().to_vec();
        edges.push(extra);
        HeteroGraph::from_parts(
            g.schema().clone(),
            &g.type_counts(),
            g.features().clone(),
            g.missing_mask().to_vec(),
            edges,
        )
    }

    #[test]
    fn loaded_fixture_is_valid() {
        assert!(validate(&tiny()).is_empty());
    }

    #[test]
    fn duplicate_reported_once() {
        let dup = tiny().edges()[0];
        let report = validate(&rebuild_with(dup));
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::DuplicateEdge { relation: 0, .. }));
        assert!(report[0].to_string().contains("(0,0) -> (1,0)"));
    }

    #[test]
    fn schema_mismatch_reported() {
        // user 0 -> user 1 under relation 0 (user -> ad)
        let bad = Edge {
            src: 0,
            dst: 1,
            relation: 0,
            timestamp: 0,
        };
        let report = validate(&rebuild_with(bad));
        assert_eq!(
            report,
            vec![Violation::SchemaMismatch {
                relation: 0,
                src_type: 0,
                dst_type: 0
            }]
        );
    }
}

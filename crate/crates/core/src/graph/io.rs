use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Edge, HeteroGraph, NodeRef, RelationSchema};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// One parsed line of an edges file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeRecord {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub relation: usize,
    pub timestamp: Option<i64>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FeatureRecord {
    pub node: NodeRef,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub edge_lines: usize,
    pub duplicates_dropped: usize,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(path: &str, line: usize, name: &str, s: Option<&str>) -> Result<T> {
    let s = s.ok_or_else(|| parse_err(path, line, format!("missing field {name}")))?;
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad {name}: {s:?}")))
}

fn content_lines<'a, R: BufRead + 'a>(reader: R, path: &'a str) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(parse_err(path, i + 1, e.to_string()))),
            Ok(l) => {
                let trimmed = l.trim_end_matches(['\r', '\n']);
                if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                    None
                } else {
                    Some(Ok((i + 1, trimmed.to_string())))
                }
            }
        })
}

/// Parses `relation_id<TAB>src_type<TAB>dst_type` lines. Relation ids must be dense from 0.
pub fn parse_schema<R: BufRead>(reader: R) -> Result<RelationSchema> {
    let path = "schema";
    let mut rels: Vec<Option<(usize, usize)>> = Vec::new();
    let mut num_types = 0;
    for item in content_lines(reader, path) {
        let (line, text) = item?;
        let mut f = text.split('\t');
        let r: usize = field(path, line, "relation_id", f.next())?;
        let s: usize = field(path, line, "src_type", f.next())?;
        let d: usize = field(path, line, "dst_type", f.next())?;
        if rels.len() <= r {
            rels.resize(r + 1, None);
        }
        if rels[r].is_some() {
            return Err(parse_err(path, line, format!("relation {r} declared twice")));
        }
        rels[r] = Some((s, d));
        num_types = num_types.max(s + 1).max(d + 1);
    }
    let relations = rels
        .into_iter()
        .enumerate()
        .map(|(r, x)| x.ok_or_else(|| parse_err(path, 0, format!("relation ids not dense: {r} missing"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(RelationSchema::new(num_types, relations))
}

/// Parses `src_type<TAB>src_id<TAB>dst_type<TAB>dst_id<TAB>relation_id<TAB>timestamp` lines.
pub fn read_edge_records<R: BufRead>(reader: R, path: &str) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    for item in content_lines(reader, path) {
        let (line, text) = item?;
        let mut f = text.split('\t');
        let st = field(path, line, "src_type", f.next())?;
        let si = field(path, line, "src_id", f.next())?;
        let dt = field(path, line, "dst_type", f.next())?;
        let di = field(path, line, "dst_id", f.next())?;
        let relation = field(path, line, "relation_id", f.next())?;
        let timestamp = match f.next().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse()
                    .map_err(|_| parse_err(path, line, format!("bad timestamp: {s:?}")))?,
            ),
        };
        if f.next().is_some() {
            return Err(parse_err(path, line, "too many fields"));
        }
        out.push(EdgeRecord {
            src: NodeRef::new(st, si),
            dst: NodeRef::new(dt, di),
            relation,
            timestamp,
            line,
        });
    }
    Ok(out)
}

pub(crate) fn read_feature_records<R: BufRead>(reader: R, path: &str) -> Result<Vec<FeatureRecord>> {
    let mut out: Vec<FeatureRecord> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = HashSet::new();
    for item in content_lines(reader, path) {
        let (line, text) = item?;
        let mut f = text.split('\t');
        let t = field(path, line, "node_type", f.next())?;
        let i = field(path, line, "node_id", f.next())?;
        let (values, missing): (Vec<f64>, Vec<bool>) = match f.next() {
            None => (Vec::new(), Vec::new()),
            Some(vals) => vals
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    if s.is_empty() {
                        Ok((0.0, true))
                    } else {
                        let v: f64 = s
                            .parse()
                            .map_err(|_| parse_err(path, line, format!("bad feature value {s:?}")))?;
                        if !v.is_finite() {
                            return Err(parse_err(path, line, "non-finite feature value"));
                        }
                        Ok((v, false))
                    }
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
        };
        if f.next().is_some() {
            return Err(parse_err(path, line, "too many fields"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(path, line, format!("expected {d} feature values, got {}", values.len())))
            }
            _ => {}
        }
        let node = NodeRef::new(t, i);
        if !seen.insert(node) {
            return Err(parse_err(path, line, format!("duplicate feature row for {node:?}")));
        }
        out.push(FeatureRecord { node, values, missing });
    }
    Ok(out)
}

pub(crate) fn check_edge(schema: &RelationSchema, src: NodeRef, dst: NodeRef, relation: usize) -> Result<()> {
    for n in [src, dst] {
        if n.node_type >= schema.num_types {
            return Err(Error::UnknownNodeType {
                node_type: n.node_type,
                num_types: schema.num_types,
            });
        }
    }
    let expected = *schema
        .relations
        .get(relation)
        .ok_or(Error::UnknownRelation(relation))?;
    let got = (src.node_type, dst.node_type);
    if expected != got {
        return Err(Error::SchemaMismatch {
            relation,
            expected,
            got,
        });
    }
    if src == dst {
        return Err(Error::SelfLoop(src.node_type, src.intra_id));
    }
    Ok(())
}

pub fn load_graph<E: Read, F: Read>(edges: E, features: F, schema: RelationSchema) -> Result<HeteroGraph> {
    let (g, stats) = load_graph_with_stats(edges, features, schema)?;
    if stats.duplicates_dropped > 0 {
        log::warn!("dropped {} duplicate edges at load", stats.duplicates_dropped);
    }
    Ok(g)
}

pub fn load_graph_with_stats<E: Read, F: Read>(
    edges: E,
    features: F,
    schema: RelationSchema,
) -> Result<(HeteroGraph, LoadStats)> {
    let edge_recs = read_edge_records(BufReader::new(edges), "edges")?;
    let feat_recs = read_feature_records(BufReader::new(features), "features")?;

    for r in &edge_recs {
        check_edge(&schema, r.src, r.dst, r.relation).map_err(|e| parse_err("edges", r.line, e.to_string()))?;
    }
    for f in &feat_recs {
        if f.node.node_type >= schema.num_types {
            return Err(Error::UnknownNodeType {
                node_type: f.node.node_type,
                num_types: schema.num_types,
            });
        }
    }

    let mut counts = vec![0usize; schema.num_types];
    let nodes_iter = edge_recs
        .iter()
        .flat_map(|r| [r.src, r.dst])
        .chain(feat_recs.iter().map(|f| f.node));
    for n in nodes_iter.clone() {
        counts[n.node_type] = counts[n.node_type].max(n.intra_id + 1);
    }
    let mut present: Vec<Vec<bool>> = counts.iter().map(|&c| vec![false; c]).collect();
    for n in nodes_iter {
        present[n.node_type][n.intra_id] = true;
    }
    for (t, p) in present.iter().enumerate() {
        if let Some(missing) = p.iter().position(|x| !x) {
            return Err(Error::IdGap { node_type: t, missing });
        }
    }

    let mut offsets = vec![0usize; schema.num_types + 1];
    for t in 0..schema.num_types {
        offsets[t + 1] = offsets[t] + counts[t];
    }
    let v = offsets[schema.num_types];
    let dim = feat_recs.first().map_or(0, |f| f.values.len());
    let mut feats = Matrix::zeros(v, dim);
    let mut missing = vec![true; v * dim];
    for f in &feat_recs {
        let g = offsets[f.node.node_type] + f.node.intra_id;
        feats.row_mut(g).copy_from_slice(&f.values);
        missing[g * dim..(g + 1) * dim].copy_from_slice(&f.missing);
    }

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(edge_recs.len());
    let mut stats = LoadStats {
        edge_lines: edge_recs.len(),
        duplicates_dropped: 0,
    };
    for r in &edge_recs {
        let src = offsets[r.src.node_type] + r.src.intra_id;
        let dst = offsets[r.dst.node_type] + r.dst.intra_id;
        if !seen.insert((src, dst, r.relation)) {
            stats.duplicates_dropped += 1;
            continue;
        }
        out.push(Edge {
            src,
            dst,
            relation: r.relation,
            timestamp: r.timestamp.unwrap_or(0),
        });
    }
    Ok((HeteroGraph::from_parts(schema, &counts, feats, missing, out), stats))
}

/// Loads a graph whose global order is the feature file's line order, as
/// written by [`write_features`]. Every node must have a feature line, and
/// within a type intra ids must ascend with line order. Used to reload
/// graphs that grew by increments without moving any index.
pub fn load_graph_ordered<E: Read, F: Read>(edges: E, features: F, schema: RelationSchema) -> Result<HeteroGraph> {
    let edge_recs = read_edge_records(BufReader::new(edges), "edges")?;
    let feat_recs = read_feature_records(BufReader::new(features), "features")?;
    let mut next = vec![0usize; schema.num_types];
    let mut index: Vec<Vec<usize>> = vec![Vec::new(); schema.num_types];
    let dim = feat_recs.first().map_or(0, |f| f.values.len());
    let mut feats = Matrix::zeros(feat_recs.len(), dim);
    let mut missing = Vec::with_capacity(feat_recs.len() * dim);
    let mut nodes = Vec::with_capacity(feat_recs.len());
    for (g, f) in feat_recs.iter().enumerate() {
        let t = f.node.node_type;
        if t >= schema.num_types {
            return Err(Error::UnknownNodeType {
                node_type: t,
                num_types: schema.num_types,
            });
        }
        if f.node.intra_id != next[t] {
            return Err(parse_err("features", g + 1, format!("node ({t},{}) out of order, expected intra id {}", f.node.intra_id, next[t])));
        }
        next[t] += 1;
        index[t].push(g);
        nodes.push(f.node);
        feats.row_mut(g).copy_from_slice(&f.values);
        missing.extend_from_slice(&f.missing);
    }
    let mut out = Vec::with_capacity(edge_recs.len());
    let mut seen = HashSet::new();
    for r in &edge_recs {
        check_edge(&schema, r.src, r.dst, r.relation).map_err(|e| parse_err("edges", r.line, e.to_string()))?;
        let at = |n: NodeRef| index[n.node_type].get(n.intra_id).copied().ok_or(Error::DanglingEndpoint(n.node_type, n.intra_id));
        let (src, dst) = (at(r.src)?, at(r.dst)?);
        if seen.insert((src, dst, r.relation)) {
            out.push(Edge {
                src,
                dst,
                relation: r.relation,
                timestamp: r.timestamp.unwrap_or(0),
            });
        }
    }
    Ok(HeteroGraph::from_ordered(schema, nodes, feats, missing, out))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Loads the three TSV files; a missing features path means all features absent.
pub fn load_graph_files(edges: &Path, features: Option<&Path>, schema: &Path) -> Result<HeteroGraph> {
    let schema = parse_schema(BufReader::new(open(schema)?))?;
    let label = |p: &Path, e: Error| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: p.display().to_string(),
            line,
            msg,
        },
        other => other,
    };
    let ef = open(edges)?;
    match features {
        Some(fp) => {
            let ff = open(fp)?;
            load_graph(ef, ff, schema).map_err(|e| label(edges, e))
        }
        None => load_graph(ef, std::io::empty(), schema).map_err(|e| label(edges, e)),
    }
}

pub fn write_schema<W: Write>(schema: &RelationSchema, mut w: W) -> std::io::Result<()> {
    for (r, (s, d)) in schema.relations.iter().enumerate() {
        writeln!(w, "{r}\t{s}\t{d}")?;
    }
    Ok(())
}

pub fn write_edges<W: Write>(g: &HeteroGraph, mut w: W) -> std::io::Result<()> {
    for e in g.edges() {
        let (s, d) = (g.node(e.src), g.node(e.dst));
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.node_type, s.intra_id, d.node_type, d.intra_id, e.relation, e.timestamp
        )?;
    }
    Ok(())
}

pub fn write_features<W: Write>(g: &HeteroGraph, mut w: W) -> std::io::Result<()> {
    let dim = g.feature_dim();
    for (gi, n) in g.nodes().iter().enumerate() {
        if dim == 0 {
            writeln!(w, "{}\t{}", n.node_type, n.intra_id)?;
            continue;
        }
        let vals: Vec<String> = (0..dim)
            .map(|c| {
                if g.missing_mask()[gi * dim + c] {
                    String::new()
                } else {
                    format!("{}", g.features()[(gi, c)])
                }
            })
            .collect();
        writeln!(w, "{}\t{}\t{}", n.node_type, n.intra_id, vals.join(","))?;
    }
    Ok(())
}

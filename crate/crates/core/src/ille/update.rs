use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::increment::{embed_increment, Reconstruction};
use super::neighbors::bfs_neighbors;
use super::refine::{incremental_refine, AlignmentProblem, AlignmentState, RefineOutcome};
use super::weights::{merge, reconstruction_weights, SparseWeights};
use crate::error::{Error, Result};
use crate::graph::{sample_subgraph, HeteroGraph, IncrementBatch, NodeRef};
use crate::model::{embed_subgraph, init_features, now_ms, EmbeddingTable, ModelConfig, ModelParams};
use crate::numcore::Matrix;

/// Which vectors the reconstruction weights are fitted on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpace {
    /// Base-table embedding rows.
    #[default]
    Embedding,
    /// Projected input features from the static model.
    Feature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlleConfig {
    pub k: usize,
    pub alpha: f64,
    pub eps: f64,
    pub refine_steps: usize,
    pub step_size: f64,
    pub mu: f64,
    pub weight_space: WeightSpace,
    pub rng_seed: u64,
}

impl Default for IlleConfig {
    fn default() -> Self {
        IlleConfig {
            k: 8,
            alpha: 0.5,
            eps: 1e-3,
            refine_steps: 10,
            step_size: 0.05,
            mu: 1.0,
            weight_space: WeightSpace::Embedding,
            rng_seed: 0,
        }
    }
}

impl IlleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("ille.k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("ille.alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("ille.eps {} must be finite and nonnegative", self.eps)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("ille.step_size {} must be positive", self.step_size)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("ille.mu {} must be nonnegative", self.mu)));
        }
        Ok(())
    }
}

/// A node to re-embed: merged reconstruction weights (sorted, summing to 1)
/// and the neighbors that were sampled for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub node: usize,
    pub weights: Vec<(usize, f64)>,
    pub sampled: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EmbedOutcome {
    pub y: Matrix,
    pub state: AlignmentState,
    /// Targets that were reconstructed, ascending.
    pub embedded: Vec<usize>,
    /// New nodes left on their fallback rows, ascending.
    pub cold: Vec<usize>,
    /// Rows refinement was allowed to move, ascending.
    pub update_set: Vec<usize>,
    /// Reconstruction loss over the embedded targets after refinement.
    pub eq7_loss: f64,
    pub refine: RefineOutcome,
}

/// Rows `n_old..` are new. A new target is anchored when its weights reach an
/// existing row, directly or through other anchored new targets; unanchored
/// new targets join `cold`.
fn anchored(n_old: usize, targets: &[Target], cold: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut ok: BTreeSet<usize> = BTreeSet::new();
    loop {
        let before = ok.len();
        for t in targets {
            if t.node < n_old || ok.contains(&t.node) {
                continue;
            }
            if t.weights.iter().any(|&(j, _)| (j < n_old) || (ok.contains(&j) && !cold.contains(&j))) {
                ok.insert(t.node);
            }
        }
        if ok.len() == before {
            return ok;
        }
    }
}

/// Model-agnostic incremental embedding.
///
/// `y` holds the `n_old` rows `state` was kept in sync with; `fallback` holds
/// one row per new node, used as-is for cold nodes. New targets are solved by
/// reconstruction, existing targets move by the residual blend toward their
/// reconstruction, then rows of targets and their sampled neighbors are refined.
pub fn embed_targets(
    y: Matrix,
    fallback: &Matrix,
    targets: &[Target],
    cold: &[usize],
    state: AlignmentState,
    cfg: &IlleConfig,
) -> Result<EmbedOutcome> {
    let n_old = y.rows();
    let n_total = n_old + fallback.rows();
    let mut y = y;
    let mut state = state;
    let mut cold: BTreeSet<usize> = cold.iter().copied().collect();
    let ok = anchored(n_old, targets, &cold);
    for t in targets {
        if t.node >= n_old && !ok.contains(&t.node) {
            cold.insert(t.node);
        }
    }
    for t in targets {
        if t.node >= n_total || t.weights.iter().any(|e| e.0 >= n_total) {
            return Err(Error::UnknownNode(usize::MAX, t.node.max(n_total)));
        }
    }

    // every new row starts from its fallback; cold ones stay there
    let base_rows: Vec<(usize, Vec<f64>)> = (n_old..n_total).map(|v| (v, fallback.row(v - n_old).to_vec())).collect();
    state.replace(&mut y, &base_rows, Vec::new());

    let fresh: Vec<&Target> = targets.iter().filter(|t| t.node >= n_old && !cold.contains(&t.node)).collect();
    let recs: Vec<Reconstruction> = fresh
        .iter()
        .map(|t| Reconstruction {
            node: t.node,
            weights: t.weights.clone(),
        })
        .collect();
    let sol = embed_increment(&y, &recs)?;
    let rows: Vec<(usize, Vec<f64>)> = fresh.iter().enumerate().map(|(s, t)| (t.node, sol.rows.row(s).to_vec())).collect();
    let wrows = fresh.iter().map(|t| (t.node, t.weights.clone())).collect();
    state.replace(&mut y, &rows, wrows);

    let touched: Vec<&Target> = targets.iter().filter(|t| t.node < n_old).collect();
    let d = y.cols();
    let blended: Vec<(usize, Vec<f64>)> = touched
        .iter()
        .map(|t| {
            let recon = super::weights::weighted_sum(&t.weights, |j| y.row(j), d);
            let row = y.row(t.node).iter().zip(&recon).map(|(x, r)| cfg.alpha * r + (1.0 - cfg.alpha) * x).collect();
            (t.node, row)
        })
        .collect();
    let wrows = touched.iter().map(|t| (t.node, t.weights.clone())).collect();
    state.replace(&mut y, &blended, wrows);

    let embedded: Vec<usize> = targets
        .iter()
        .map(|t| t.node)
        .filter(|v| !cold.contains(v))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut update: BTreeSet<usize> = BTreeSet::new();
    for t in targets.iter().filter(|t| !cold.contains(&t.node)) {
        update.insert(t.node);
        update.extend(t.sampled.iter().copied());
    }
    let update_set: Vec<usize> = update.into_iter().collect();

    let mut problem = AlignmentProblem {
        state,
        y,
        update_set: update_set.clone(),
        mu: cfg.mu,
    };
    let refine = incremental_refine(&mut problem, cfg.refine_steps, cfg.step_size);
    if refine.stalled {
        log::warn!("alignment refinement stalled after {} accepted steps", refine.trajectory.len() - 1);
    }
    let AlignmentProblem { state, y, .. } = problem;
    let eq7_loss = embedded
        .iter()
        .map(|&v| state.weights.residual(&y, v).iter().map(|x| x * x).sum::<f64>())
        .sum();
    Ok(EmbedOutcome {
        y,
        state,
        embedded,
        cold: cold.into_iter().collect(),
        update_set,
        eq7_loss,
        refine,
    })
}

fn mean_rows(x: &Matrix, idx: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for &j in idx {
        for (o, v) in out.iter_mut().zip(x.row(j)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= idx.len().max(1) as f64);
    out
}

/// BFS sample plus weights for one node. The center vector is the node's own
/// row in `space` when it has one, else the mean of its hop-1 rows.
fn graph_target(graph: &HeteroGraph, space: &Matrix, v: usize, cfg: &IlleConfig) -> Result<Option<Target>> {
    let sample = match bfs_neighbors(graph, v, cfg.k, cfg.rng_seed) {
        Ok(s) => s,
        Err(Error::ColdIsolated(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let center = if v < space.rows() {
        space.row(v).to_vec()
    } else {
        let hop1: Vec<usize> = sample
            .neighbors
            .iter()
            .zip(&sample.hop_labels)
            .filter(|(&j, &h)| h == 1 && j < space.rows())
            .map(|(&j, _)| j)
            .collect();
        if hop1.is_empty() {
            return Ok(None);
        }
        mean_rows(space, &hop1)
    };
    // neighbors without a row in `space` cannot enter the Gram
    let usable: Vec<usize> = sample.neighbors.iter().copied().filter(|&j| j < space.rows()).collect();
    if usable.is_empty() {
        return Ok(None);
    }
    let w = reconstruction_weights(&center, &space.gather_rows(&usable), cfg.eps)?;
    Ok(Some(Target {
        node: v,
        weights: merge(&usable, &w),
        sampled: sample.neighbors,
    }))
}

/// Reconstruction weights for every non-isolated node of `graph` under `y`,
/// frozen into a fresh alignment state.
pub fn capture_alignment(graph: &HeteroGraph, y: &Matrix, cfg: &IlleConfig) -> Result<AlignmentState> {
    let n = y.rows().min(graph.num_nodes());
    let mut w = SparseWeights::new(y.rows());
    for v in 0..n {
        if let Some(t) = graph_target(graph, y, v, cfg)? {
            w.set_row(v, t.weights);
        }
    }
    Ok(AlignmentState::capture(y, w))
}

/// Graph-driven incremental embedding of `new_nodes` (global indices at or
/// beyond `y.rows()`) and `touched` existing nodes.
///
/// In embedding space, weights see only rows of `y`, so a new node is centered
/// on its hop-1 neighbors. In feature space every node has a row in
/// `features` and is centered on it.
pub fn ille_embed(
    graph: &HeteroGraph,
    y: Matrix,
    fallback: &Matrix,
    touched: &[usize],
    features: Option<&Matrix>,
    state: AlignmentState,
    cfg: &IlleConfig,
) -> Result<EmbedOutcome> {
    let n_old = y.rows();
    let n_total = n_old + fallback.rows();
    if n_total > graph.num_nodes() {
        return Err(Error::Shape {
            op: "ille_embed rows",
            lhs: (n_total, y.cols()),
            rhs: (graph.num_nodes(), y.cols()),
        });
    }
    let mut order: BTreeSet<usize> = touched.iter().copied().filter(|&v| v < n_old).collect();
    order.extend(n_old..n_total);
    let space = features.unwrap_or(&y);
    let mut targets = Vec::with_capacity(order.len());
    let mut cold = Vec::new();
    for v in order {
        match graph_target(graph, space, v, cfg)? {
            Some(t) => targets.push(t),
            None if v >= n_old => cold.push(v),
            None => {}
        }
    }
    embed_targets(y, fallback, &targets, &cold, state, cfg)
}

/// Writes refined rows into the identity table so that
/// `id_table[intra_id] + type_table[node_type]` reproduces each row, exactly
/// whenever some `f64` allows it and otherwise to the nearest sum.
/// Rows are applied in node order; nodes of different types share a table row
/// per intra id, so the later type wins.
///
/// Returns, per surviving write, the row the model now reproduces.
pub fn disentangled_update(params: &mut ModelParams, rows: &[(NodeRef, Vec<f64>)], grow_seed: u64) -> Result<Vec<(NodeRef, Vec<f64>)>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let d = params.dims().hidden_dim;
    let mut sorted: Vec<&(NodeRef, Vec<f64>)> = rows.iter().collect();
    sorted.sort_by_key(|r| r.0);
    for (n, row) in &sorted {
        if row.len() != d {
            return Err(Error::Shape {
                op: "disentangled_update",
                lhs: (1, row.len()),
                rhs: (1, d),
            });
        }
        if n.node_type >= params.type_table().rows() {
            return Err(Error::UnknownNodeType {
                node_type: n.node_type,
                num_types: params.type_table().rows(),
            });
        }
    }
    let need = sorted.iter().map(|r| r.0.intra_id + 1).max().unwrap_or(0);
    params.ensure_id_rows(need, grow_seed);
    let mut last: BTreeMap<usize, NodeRef> = BTreeMap::new();
    for (n, row) in &sorted {
        let ty = params.type_table().row(n.node_type).to_vec();
        let ids = params.id_table_mut().row_mut(n.intra_id);
        for ((slot, &target), &b) in ids.iter_mut().zip(row).zip(&ty) {
            *slot = inverse_add(target, b);
        }
        last.insert(n.intra_id, *n);
    }
    let mut out: Vec<(NodeRef, Vec<f64>)> = last
        .into_values()
        .map(|n| {
            let ty = params.type_table().row(n.node_type);
            let row = params.id_table().row(n.intra_id).iter().zip(ty).map(|(a, b)| a + b).collect();
            (n, row)
        })
        .collect();
    out.sort_by_key(|r| r.0);
    Ok(out)
}

/// `c` with `c + b == a` in floating point when such a `c` lies within a few
/// ulps of `a − b`.
fn inverse_add(a: f64, b: f64) -> f64 {
    let c = a - b;
    if c + b == a {
        return c;
    }
    let (mut up, mut down) = (c, c);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        if up + b == a {
            return up;
        }
        if down + b == a {
            return down;
        }
    }
    c
}

/// One JSON line per applied batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub batch_time: i64,
    pub n_new_nodes: usize,
    pub n_new_edges: usize,
    pub n_updated: usize,
    pub n_cold_isolated: usize,
    pub eq7_loss: f64,
    #[serde(rename = "refine_J_initial")]
    pub refine_j_initial: f64,
    #[serde(rename = "refine_J_final")]
    pub refine_j_final: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct IlleResult {
    pub params: ModelParams,
    pub table: EmbeddingTable,
    pub state: AlignmentState,
    pub report: UpdateReport,
    /// Nodes whose table row may differ from the base, ascending.
    pub changed: Vec<usize>,
}

/// Applies an already-merged batch to the embedding table and the identity
/// table without retraining. `graph` must contain the batch; nodes at index
/// `base.len()` and beyond are the new ones.
pub fn ille_update(
    graph: &HeteroGraph,
    batch: &IncrementBatch,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    base: &EmbeddingTable,
    state: &AlignmentState,
    cfg: &IlleConfig,
) -> Result<IlleResult> {
    let start = Instant::now();
    cfg.validate()?;
    let n_old = base.len();
    let n_total = graph.num_nodes();
    if n_old > n_total {
        return Err(Error::Shape {
            op: "ille_update base table",
            lhs: (n_old, base.dim()),
            rhs: (n_total, base.dim()),
        });
    }
    let mut params = params.clone();
    let new_nodes: Vec<usize> = (n_old..n_total).collect();
    let mut touched: BTreeSet<usize> = BTreeSet::new();
    for e in &batch.new_edges {
        for n in [e.src, e.dst] {
            match graph.index_of(n) {
                Some(v) if v < n_old => {
                    touched.insert(v);
                }
                Some(_) => {}
                None => return Err(Error::DanglingEndpoint(n.node_type, n.intra_id)),
            }
        }
    }
    if new_nodes.is_empty() && touched.is_empty() {
        return Ok(IlleResult {
            params,
            table: EmbeddingTable::new(base.rows.clone(), base.version + 1, now_ms()),
            state: state.clone(),
            report: UpdateReport {
                batch_time: batch.batch_time,
                n_new_edges: batch.new_edges.len(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                ..UpdateReport::default()
            },
            changed: Vec::new(),
        });
    }

    let need = new_nodes.iter().map(|&v| graph.node(v).intra_id + 1).max().unwrap_or(0);
    params.ensure_id_rows(need, cfg.rng_seed);
    let fallback = if new_nodes.is_empty() {
        Matrix::zeros(0, base.dim())
    } else {
        let sub = sample_subgraph(graph, &new_nodes, model_cfg.degree_limit, model_cfg.rng_seed)?;
        let z = embed_subgraph(graph, &sub, &params, model_cfg)?;
        z.gather_rows(&(0..new_nodes.len()).collect::<Vec<_>>())
    };
    let features = match cfg.weight_space {
        WeightSpace::Embedding => None,
        WeightSpace::Feature => Some(init_features(graph, &params, model_cfg)?),
    };
    let touched: Vec<usize> = touched.into_iter().collect();
    let out = ille_embed(graph, base.rows.clone(), &fallback, &touched, features.as_ref(), state.clone(), cfg)?;

    let mut changed: BTreeSet<usize> = new_nodes.iter().copied().collect();
    for &v in &out.update_set {
        if v < n_old && out.y.row(v) != base.rows.row(v) {
            changed.insert(v);
        }
    }
    let writes: Vec<(NodeRef, Vec<f64>)> = changed.iter().map(|&v| (graph.node(v), out.y.row(v).to_vec())).collect();
    let written = disentangled_update(&mut params, &writes, cfg.rng_seed)?;
    // the table keeps what the model reproduces, so the two never disagree
    let (mut y, mut state) = (out.y, out.state);
    let fix: Vec<(usize, Vec<f64>)> = written
        .into_iter()
        .map(|(n, row)| (graph.index_of(n).expect("written node exists"), row))
        .filter(|(v, row)| y.row(*v) != row.as_slice())
        .collect();
    state.replace(&mut y, &fix, Vec::new());

    let report = UpdateReport {
        batch_time: batch.batch_time,
        n_new_nodes: new_nodes.len(),
        n_new_edges: batch.new_edges.len(),
        n_updated: changed.len(),
        n_cold_isolated: out.cold.len(),
        eq7_loss: out.eq7_loss,
        refine_j_initial: out.refine.trajectory[0],
        refine_j_final: *out.refine.trajectory.last().expect("trajectory starts non-empty"),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(IlleResult {
        params,
        table: EmbeddingTable::new(y, base.version + 1, now_ms()),
        state,
        report,
        changed: changed.into_iter().collect(),
    })
}

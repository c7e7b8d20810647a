use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::PipelineConfig;
use super::store::{Snapshot, SnapshotKind, SnapshotManifest, SnapshotStore};
use crate::error::{Error, Result};
use crate::eval::{cosine_topk, evaluate, EvalData, EvalReport};
use crate::graph::{apply_increment, load_graph_files, read_edge_records, read_increment, HeteroGraph, NodeRef};
use crate::ille::{capture_alignment, ille_update, UpdateReport};
use crate::model::{embed_all, EmbeddingTable, EpochMetrics, ModelDims, ModelParams};
use crate::numcore::OptimizerState;

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub manifest: SnapshotManifest,
    pub epochs: Vec<EpochMetrics>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UpdateOutcome {
    pub manifest: SnapshotManifest,
    pub report: UpdateReport,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Static phase: trains on the newest snapshot's graph (or the input files
/// when the store is empty), embeds every node and publishes a static version.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    let lock = store.lock()?;
    let latest = store.latest()?;
    let (graph, warm) = match &latest {
        Some(m) => {
            let snap = store.load(m)?;
            let warm = (!cfg.train.cold_start_retrain).then_some(snap.params);
            (snap.graph, warm)
        }
        None => {
            cfg.check_inputs()?;
            (load_graph_files(&cfg.paths.edges, cfg.paths.features.as_deref(), &cfg.paths.schema)?, None)
        }
    };
    let mut model_cfg = cfg.model.clone();
    if model_cfg.input_dim == 0 {
        model_cfg.input_dim = graph.feature_dim();
    } else if model_cfg.input_dim != graph.feature_dim() {
        return Err(Error::Config(format!("model.input_dim {} but the graph has {} feature columns", model_cfg.input_dim, graph.feature_dim())));
    }
    let dims = ModelDims {
        input_dim: graph.feature_dim(),
        hidden_dim: model_cfg.hidden_dim,
        num_types: graph.num_types(),
        num_relations: graph.num_relations(),
        num_gcn_layers: model_cfg.num_gcn_layers,
    };
    let mut params = match warm {
        Some(p) if p.dims() == dims => p,
        Some(_) => return Err(Error::Config("model shape changed since the last snapshot; set train.cold_start_retrain".into())),
        None => ModelParams::init(&model_cfg, dims, graph.max_type_count())?,
    };
    let mut opt = OptimizerState::new(cfg.optim.clone(), &params.store);
    let mut epochs = Vec::with_capacity(cfg.train.epochs as usize);
    for e in 0..cfg.train.epochs {
        let m = crate::model::train_epoch(&graph, &mut params, &model_cfg, &mut opt, e)?;
        log::info!("epoch {} loss {:.5} ({:.0} ms)", m.epoch, m.mean_loss, m.wall_ms);
        epochs.push(m);
    }
    let mut table = embed_all(&graph, &params, &model_cfg)?;
    let alignment = capture_alignment(&graph, &table.rows, &cfg.ille)?;
    table.version = store.latest()?.map_or(1, |m| m.version + 1);
    let manifest = store.publish(
        &lock,
        SnapshotKind::Static,
        latest.as_ref().map(|m| m.version),
        &graph,
        &model_cfg,
        &params,
        &table,
        &alignment,
        cfg.digest(),
        0,
        None,
    )?;
    Ok(TrainOutcome {
        manifest,
        epochs,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Incremental phase: merges one batch into the base version's graph, runs
/// the ILLE update and publishes a child version.
pub fn cmd_update(cfg: &PipelineConfig, edges: &Path, features: Option<&Path>, base: Option<u64>) -> Result<UpdateOutcome> {
    cfg.validate()?;
    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    let lock = store.lock()?;
    let m = store.resolve(base)?;
    let snap = store.load(&m)?;
    let batch = read_increment(&snap.graph, open(edges)?, features.map(open).transpose()?)?;
    let graph = apply_increment(&snap.graph, &batch)?;
    let out = ille_update(&graph, &batch, &snap.params, &snap.config, &snap.table, &snap.alignment, &cfg.ille)?;
    if out.report.n_cold_isolated > 0 {
        log::warn!("{} new nodes had no neighbors and kept feature-only embeddings", out.report.n_cold_isolated);
    }
    let mut table = out.table;
    table.version = store.latest()?.map_or(1, |l| l.version + 1);
    let manifest = store.publish(
        &lock,
        SnapshotKind::Incremental,
        Some(m.version),
        &graph,
        &snap.config,
        &out.params,
        &table,
        &out.state,
        cfg.digest(),
        m.increments_applied + 1,
        Some(out.report.clone()),
    )?;
    Ok(UpdateOutcome {
        manifest,
        report: out.report,
    })
}

/// `(user, item)` global pairs from an edge-format test file. Users absent
/// from the graph get indices past the table so they rank as misses; items
/// absent from the graph are dropped.
fn test_pairs(graph: &HeteroGraph, cfg: &PipelineConfig, path: &Path) -> Result<Vec<(usize, usize)>> {
    let recs = read_edge_records(open(path)?, &path.display().to_string())?;
    let (ut, it) = (cfg.roles.user_type, cfg.roles.item_type);
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for r in recs {
        let (u, i) = match (r.src.node_type, r.dst.node_type) {
            (a, b) if a == ut && b == it => (r.src, r.dst),
            (a, b) if a == it && b == ut => (r.dst, r.src),
            _ => continue,
        };
        let Some(ig) = graph.index_of(i) else {
            dropped += 1;
            continue;
        };
        let ug = graph.index_of(u).unwrap_or(usize::MAX - u.intra_id);
        out.push((ug, ig));
    }
    if dropped > 0 {
        log::warn!("{dropped} test interactions name items outside the graph");
    }
    Ok(out)
}

fn interactions(graph: &HeteroGraph, cfg: &PipelineConfig) -> HashSet<(usize, usize)> {
    let (ut, it) = (cfg.roles.user_type, cfg.roles.item_type);
    let mut out = HashSet::new();
    for e in graph.edges() {
        let (s, d) = (graph.node(e.src).node_type, graph.node(e.dst).node_type);
        if s == ut && d == it {
            out.insert((e.src, e.dst));
        } else if s == it && d == ut {
            out.insert((e.dst, e.src));
        }
    }
    out
}

/// Evaluates a table against `graph` and a test file.
pub fn evaluate_table(cfg: &PipelineConfig, graph: &HeteroGraph, table: &EmbeddingTable, test: &Path) -> Result<EvalReport> {
    let pairs = test_pairs(graph, cfg, test)?;
    let mut inter = interactions(graph, cfg);
    inter.extend(pairs.iter().copied());
    let data = EvalData {
        items: graph.nodes_of_type(cfg.roles.item_type),
        test: &pairs,
        interacted: &inter,
    };
    evaluate(table, &data, &cfg.eval)
}

fn refresh_latency(store: &SnapshotStore, m: &SnapshotManifest) -> Result<Option<i64>> {
    Ok(match m.parent {
        Some(p) => Some(m.created_ms - store.manifest(p)?.created_ms),
        None => None,
    })
}

pub fn cmd_evaluate(cfg: &PipelineConfig, version: Option<u64>, test: &Path) -> Result<EvalReport> {
    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    let m = store.resolve(version)?;
    let graph = store.graph(&m)?;
    let table = store.table(&m)?;
    let mut rep = evaluate_table(cfg, &graph, &table, test)?;
    rep.embedding_refresh_latency_ms = refresh_latency(&store, &m)?;
    Ok(rep)
}

/// Top-`k` items for one user of a pinned version.
pub fn cmd_retrieve(cfg: &PipelineConfig, version: Option<u64>, user: NodeRef, k: usize) -> Result<Vec<(NodeRef, f64)>> {
    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    let m = store.resolve(version)?;
    let graph = store.graph(&m)?;
    let table = store.table(&m)?;
    let g = graph.index_of(user).filter(|&g| g < table.len()).ok_or(Error::UnknownNode(user.node_type, user.intra_id))?;
    let items = graph.nodes_of_type(cfg.roles.item_type);
    Ok(cosine_topk(table.row(g), &table, items, k)?.into_iter().map(|(i, s)| (graph.node(i), s)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamStep {
    /// 0 for the base evaluation, then 1-based batch number.
    pub batch: usize,
    pub version: u64,
    pub retrained: bool,
    pub update: Option<UpdateReport>,
    pub update_wall_ms: Option<f64>,
    pub retrain_wall_ms: Option<f64>,
    pub eval: EvalReport,
    /// The starting snapshot's table scored on the same test set.
    pub frozen_eval: EvalReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamOutcome {
    pub steps: Vec<StreamStep>,
    /// `(version, refresh latency ms)` for every published version after the base.
    pub freshness: Vec<(u64, i64)>,
}

/// Alternates update and evaluation per batch, retraining every
/// `static_refresh_every` batches. `tests` holds either one file used
/// throughout or one per evaluation (base first).
pub fn cmd_simulate_stream(cfg: &PipelineConfig, increments: &[(PathBuf, Option<PathBuf>)], tests: &[PathBuf]) -> Result<StreamOutcome> {
    if tests.is_empty() || (tests.len() != 1 && tests.len() != increments.len() + 1) {
        return Err(Error::Config(format!("simulate-stream needs 1 or {} test files, got {}", increments.len() + 1, tests.len())));
    }
    let test_for = |b: usize| if tests.len() == 1 { &tests[0] } else { &tests[b] };
    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    if store.latest()?.is_none() {
        cmd_train(cfg)?;
    }
    let base_m = store.resolve(None)?;
    let base: Snapshot = store.load(&base_m)?;
    let frozen = |b: usize| -> Result<EvalReport> { evaluate_table(cfg, &base.graph, &base.table, test_for(b)) };

    let mut steps = vec![StreamStep {
        batch: 0,
        version: base_m.version,
        retrained: false,
        update: None,
        update_wall_ms: None,
        retrain_wall_ms: None,
        eval: cmd_evaluate(cfg, Some(base_m.version), test_for(0))?,
        frozen_eval: frozen(0)?,
    }];
    for (b, (edges, feats)) in increments.iter().enumerate() {
        let b = b + 1;
        let t0 = Instant::now();
        let up = cmd_update(cfg, edges, feats.as_deref(), None)?;
        let update_ms = t0.elapsed().as_secs_f64() * 1e3;
        let mut version = up.manifest.version;
        let mut retrain_ms = None;
        let retrained = b % cfg.static_refresh_every == 0;
        if retrained {
            let t = cmd_train(cfg)?;
            retrain_ms = Some(t.wall_ms);
            version = t.manifest.version;
        }
        steps.push(StreamStep {
            batch: b,
            version,
            retrained,
            update: Some(up.report),
            update_wall_ms: Some(update_ms),
            retrain_wall_ms: retrain_ms,
            eval: cmd_evaluate(cfg, Some(version), test_for(b))?,
            frozen_eval: frozen(b)?,
        });
    }
    let mut freshness = Vec::new();
    for m in store.manifests()?.iter().filter(|m| m.version > base_m.version) {
        if let Some(l) = refresh_latency(&store, m)? {
            freshness.push((m.version, l));
        }
    }
    Ok(StreamOutcome { steps, freshness })
}

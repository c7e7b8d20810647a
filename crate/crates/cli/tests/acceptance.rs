//! Acceptance checks. Each test writes one `criterion N: PASS|FAIL|BLOCKED`
//! line straight to stdout (past the harness capture) and asserts on the hard
//! criteria. Tolerances are pinned below.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use dhge_bench::{bipartite, model, new_users, points};
use dhge_core::graph::{apply_increment, load_graph, NewEdge};
use dhge_core::ille::{
    bfs_neighbors, capture_alignment, embed_targets, full_lle_oracle, ille_update, knn, knn_weights, reconstruction_loss,
    reconstruction_weights, AlignmentState, IlleConfig, Target,
};
use dhge_core::model::{
    decode_model, decode_table, edge_attention, edge_attention_weights, embed_all, encode_model, encode_table, global_attention,
    loss_with_grad, EmbeddingTable, ModelConfig, ModelDims, ModelParams,
};
use dhge_core::pipeline::{
    cmd_evaluate, cmd_simulate_stream, cmd_train, evaluate_table, gen_fixture, FixtureSpec, PipelineConfig, SnapshotStore,
};
use dhge_core::{HeteroGraph, Matrix, NodeRef, RelationSchema, Subgraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Entries whose analytic and numeric gradients are both below this are
/// compared absolutely; relative error is meaningless at round-off scale.
const FD_ABS_FLOOR: f64 = 1e-8;
const FD_BUDGET_S: f64 = 60.0;
const GAL_TOL: f64 = 1e-10;
const EAL_TOL: f64 = 1e-10;
const SOFTMAX_TOL: f64 = 1e-12;
const LLE_LOSS_TOL: f64 = 1e-6;
const LLE_BOTTOM_TOL: f64 = 1e-10;
const ILLE_LOSS_RATIO: f64 = 1.5;
const ILLE_TIME_RATIO: f64 = 0.10;
const PLANTED_HR: f64 = 0.8;
const NULL_HR: (f64, f64) = (0.07, 0.13);
const PLANTED_BUDGET_S: f64 = 300.0;
const SCALE_RATIO: f64 = 2.5;
const K_EXPONENT: f64 = 3.5;
const UPDATE_SHARE: f64 = 0.05;

static SERIAL: Mutex<()> = Mutex::new(());

/// Timing checks must not share the CPU with each other.
fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn line(n: u32, verdict: &str, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} {detail}");
    let _ = out.flush();
}

fn verdict(n: u32, pass: bool, detail: String) {
    line(n, if pass { "PASS" } else { "FAIL" }, detail);
}

fn random(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tensor(p: &ModelParams, name: &str) -> Matrix {
    p.store.get(p.store.id(name).unwrap()).value.clone()
}

fn set(p: &mut ModelParams, name: &str, m: Matrix) {
    let id = p.store.id(name).unwrap();
    p.store.get_mut(id).value = m;
}

fn params_for(g: &HeteroGraph, c: &ModelConfig) -> ModelParams {
    let dims = ModelDims {
        input_dim: g.feature_dim(),
        hidden_dim: c.hidden_dim,
        num_types: g.num_types(),
        num_relations: g.num_relations(),
        num_gcn_layers: c.num_gcn_layers,
    };
    ModelParams::init(c, dims, g.max_type_count()).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Median wall time after one warm-up call.
fn time<T>(reps: usize, mut f: impl FnMut() -> T) -> f64 {
    std::hint::black_box(f());
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(f());
                t.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

// ---------------------------------------------------------------- 1

/// 3 users and 2 items with feature gaps, both edge directions.
fn fd_graph() -> HeteroGraph {
    let edges = "0\t0\t1\t0\t0\t1\n1\t0\t0\t0\t1\t1\n0\t1\t1\t0\t0\t2\n1\t0\t0\t1\t1\t2\n\
                 0\t1\t1\t1\t0\t3\n1\t1\t0\t1\t1\t3\n0\t2\t1\t1\t0\t4\n1\t1\t0\t2\t1\t4\n";
    let feats = "0\t0\t1,,3\n0\t1\t0.5,-0.5,0.25\n0\t2\t,,\n1\t0\t-1,2,\n1\t1\t0,0.3,1\n";
    load_graph(edges.as_bytes(), feats.as_bytes(), RelationSchema::new(2, vec![(0, 1), (1, 0)])).unwrap()
}

#[test]
fn c01_gradients_match_finite_differences() {
    let _g = serial();
    let start = Instant::now();
    let g = fd_graph();
    let cfg = ModelConfig {
        hidden_dim: 4,
        num_gcn_layers: 2,
        dropout: 0.0,
        rng_seed: 7,
        ..ModelConfig::default()
    };
    let mut p = params_for(&g, &cfg);
    // move off the initializer's zeros and ones
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for t in p.store.iter_mut() {
        for x in t.value.data_mut() {
            *x += r.random_range(-0.2..0.2);
        }
    }
    let sub = Subgraph::full(&g);
    let pos: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let neg = vec![(0, 4), (4, 0), (2, 3), (3, 2), (0, 1), (1, 2), (0, 2), (3, 4)];
    assert_eq!(pos.len(), neg.len());
    let loss = |q: &ModelParams| loss_with_grad(&g, &sub, &mut q.clone(), &cfg, &pos, &neg).unwrap();

    p.store.zero_grad();
    loss_with_grad(&g, &sub, &mut p, &cfg, &pos, &neg).unwrap();
    let (mut checked, mut bad, mut worst) = (0usize, Vec::new(), 0.0f64);
    for id in 0..p.store.len() {
        let name = p.store.get(id).name.clone();
        for e in 0..p.store.get(id).value.data().len() {
            let analytic = p.store.get(id).grad.data()[e];
            let mut q = p.clone();
            let x = q.store.get(id).value.data()[e];
            q.store.get_mut(id).value.data_mut()[e] = x + FD_STEP;
            let up = loss(&q);
            q.store.get_mut(id).value.data_mut()[e] = x - FD_STEP;
            let down = loss(&q);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let scale = analytic.abs().max(numeric.abs());
            let err = (analytic - numeric).abs();
            checked += 1;
            if scale > FD_ABS_FLOOR {
                worst = worst.max(err / scale);
                if err > FD_REL_TOL * scale {
                    bad.push(format!("{name}[{e}] {analytic:e} vs {numeric:e}"));
                }
            } else if err > FD_ABS_FLOOR {
                bad.push(format!("{name}[{e}] {analytic:e} vs {numeric:e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < FD_BUDGET_S;
    verdict(1, pass, format!("{checked} entries over {} tensors, worst rel err {worst:.2e}, {secs:.1} s", p.store.len()));
    assert!(pass, "{bad:?}");
}

// ---------------------------------------------------------------- 2

/// Quadratic-order evaluation: builds the V×V attention matrix.
fn dense_gal(x0: &Matrix, p: &ModelParams, beta: f64) -> Matrix {
    let norm = |m: Matrix| {
        let f = m.frobenius_norm();
        if f < 1e-12 {
            m
        } else {
            m.scale(1.0 / f)
        }
    };
    let q = norm(x0.matmul(&tensor(p, "gal.wq")).unwrap());
    let k = norm(x0.matmul(&tensor(p, "gal.wk")).unwrap());
    let v = x0.matmul(&tensor(p, "gal.wv")).unwrap();
    let n = x0.rows();
    let mut out = x0.scale(1.0 - beta);
    for i in 0..n {
        let a: Vec<f64> = (0..n).map(|j| q.row(i).iter().zip(k.row(j)).map(|(x, y)| x * y).sum::<f64>() / n as f64).collect();
        let diag = 1.0 + a.iter().sum::<f64>();
        for c in 0..x0.cols() {
            let s = v[(i, c)] + (0..n).map(|j| a[j] * v[(j, c)]).sum::<f64>();
            out[(i, c)] += beta * s / diag;
        }
    }
    out
}

#[test]
fn c02_linear_attention_matches_quadratic() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..100u64 {
        let v = r.random_range(1..=64);
        let d = r.random_range(1..=8);
        let feats: String = (0..v).map(|i| format!("0\t{i}\t\n")).collect();
        let g = load_graph("".as_bytes(), feats.as_bytes(), RelationSchema::new(1, vec![])).unwrap();
        let c = ModelConfig {
            hidden_dim: d,
            rng_seed: seed,
            ..ModelConfig::default()
        };
        let p = params_for(&g, &c);
        let x0 = random(v, d, &mut r);
        let beta = r.random_range(0.0..=1.0);
        let fast = global_attention(&x0, &p, beta).unwrap();
        worst = worst.max(fast.max_abs_diff(&dense_gal(&x0, &p, beta)));
    }
    let pass = worst <= GAL_TOL;
    verdict(2, pass, format!("100 fixtures V<=64, max abs diff {worst:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

/// Masked attention per relation over a full `n × n` logit matrix.
fn dense_eal(gm: &Matrix, g: &HeteroGraph, p: &ModelParams) -> Matrix {
    let n = g.num_nodes();
    let d = gm.cols();
    let types: Vec<usize> = (0..n).map(|v| g.node(v).node_type).collect();
    let proj = |m: &str| {
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let row = Matrix::from_vec(1, d, gm.row(i).to_vec()).unwrap();
            out.row_mut(i).copy_from_slice(row.matmul(&tensor(p, &format!("eal.type{}.{m}", types[i]))).unwrap().row(0));
        }
        out
    };
    let (q, k, v) = (proj("wq"), proj("wk"), proj("wv"));
    let mut msg = Matrix::zeros(n, d);
    for rel in 0..g.num_relations() {
        let pr = tensor(p, &format!("eal.rel{rel}.p")).item();
        let qa = q.matmul(&tensor(p, &format!("eal.rel{rel}.att"))).unwrap();
        let vm = v.matmul(&tensor(p, &format!("eal.rel{rel}.msg"))).unwrap();
        let mut logits = Matrix::filled(n, n, f64::NEG_INFINITY);
        for e in g.edges().iter().filter(|e| e.relation == rel) {
            logits[(e.dst, e.src)] = pr / (d as f64).sqrt() * qa.row(e.dst).iter().zip(k.row(e.src)).map(|(a, b)| a * b).sum::<f64>();
        }
        for t in 0..n {
            let m = logits.row(t).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue;
            }
            let ex: Vec<f64> = logits.row(t).iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = ex.iter().sum();
            for s in 0..n {
                for c in 0..d {
                    msg[(t, c)] += ex[s] / z * vm[(s, c)];
                }
            }
        }
    }
    let beta = tensor(p, "eal.beta");
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let b = beta.data()[types[i]];
        for c in 0..d {
            out[(i, c)] = b * msg[(i, c)] + (1.0 - b) * gm[(i, c)];
        }
    }
    out
}

#[test]
fn c03_edge_attention_matches_dense() {
    let _g = serial();
    let (mut worst, mut worst_sum) = (0.0f64, 0.0f64);
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..50u64 {
        let users = r.random_range(1..=4);
        let items = r.random_range(1..=8 - users);
        let mut edges = String::new();
        for u in 0..users {
            for i in 0..items {
                if r.random::<f64>() < 0.5 {
                    edges += &format!("0\t{u}\t1\t{i}\t0\t1\n");
                }
                if r.random::<f64>() < 0.5 {
                    edges += &format!("1\t{i}\t0\t{u}\t1\t1\n");
                }
            }
        }
        let feats: String = (0..users).map(|u| format!("0\t{u}\t\n")).chain((0..items).map(|i| format!("1\t{i}\t\n"))).collect();
        let g = load_graph(edges.as_bytes(), feats.as_bytes(), RelationSchema::new(2, vec![(0, 1), (1, 0)])).unwrap();
        let c = ModelConfig {
            hidden_dim: 4,
            rng_seed: seed,
            ..ModelConfig::default()
        };
        let mut p = params_for(&g, &c);
        set(&mut p, "eal.rel0.p", Matrix::scalar(r.random_range(0.5..2.0)));
        set(&mut p, "eal.rel1.p", Matrix::scalar(r.random_range(0.5..2.0)));
        set(&mut p, "eal.beta", Matrix::column(&[r.random(), r.random()]));
        let sub = Subgraph::full(&g);
        let gm = random(g.num_nodes(), 4, &mut r);
        let e = edge_attention(&gm, &g, &sub, &p).unwrap();
        worst = worst.max(e.max_abs_diff(&dense_eal(&gm, &g, &p)));
        for (_, ws) in edge_attention_weights(&gm, &g, &sub, &p).unwrap() {
            let mut sums: HashMap<usize, f64> = HashMap::new();
            for (_, t, w) in ws {
                *sums.entry(t).or_default() += w;
            }
            for s in sums.values() {
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }
    }
    let pass = worst <= EAL_TOL && worst_sum <= SOFTMAX_TOL;
    verdict(3, pass, format!("50 fixtures <=8 nodes, max abs diff {worst:.2e}, softmax row-sum err {worst_sum:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_lle_exact_on_flat_manifold() {
    let _g = serial();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let basis = random(2, 5, &mut r);
    let offset = random(1, 5, &mut r);
    let coords = random(200, 2, &mut r);
    let mut x = coords.matmul(&basis).unwrap();
    for i in 0..200 {
        for (a, b) in x.row_mut(i).iter_mut().zip(offset.row(0)) {
            *a += b;
        }
    }
    let s = full_lle_oracle(&x, 8, 2, 1e-9).unwrap();
    let loss = reconstruction_loss(&s.y, &s.weights);
    let pass = loss < LLE_LOSS_TOL && s.bottom.abs() < LLE_BOTTOM_TOL;
    verdict(4, pass, format!("200 points on a 2-D affine plane in 5-D, Eq. loss {loss:.2e}, bottom eigenvalue {:.2e}", s.bottom));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn swiss_roll(n: usize, r: &mut impl Rng) -> Matrix {
    let mut x = Matrix::zeros(n, 3);
    for i in 0..n {
        let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * r.random::<f64>());
        let h = 21.0 * r.random::<f64>();
        x.row_mut(i).copy_from_slice(&[t * t.cos(), h, t * t.sin()]);
    }
    x
}

#[test]
fn c05_ille_tracks_full_lle() {
    let _g = serial();
    let (n_base, n_new, k, d, eps) = (300, 30, 8, 2, 1e-3);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let x = swiss_roll(n_base + n_new, &mut r);
    let base_x = x.gather_rows(&(0..n_base).collect::<Vec<_>>());
    let base = full_lle_oracle(&base_x, k, d, eps).unwrap();
    let state = AlignmentState::capture(&base.y, base.weights.clone());
    let cfg = IlleConfig {
        k,
        eps,
        ..IlleConfig::default()
    };

    let t0 = Instant::now();
    let targets: Vec<Target> = (n_base..n_base + n_new)
        .map(|v| {
            let nb = knn(&x, v, k);
            let w = reconstruction_weights(x.row(v), &x.gather_rows(&nb), eps).unwrap();
            let mut weights: Vec<(usize, f64)> = nb.iter().copied().zip(w).collect();
            weights.sort_by_key(|e| e.0);
            Target { node: v, weights, sampled: nb }
        })
        .collect();
    let fallback = Matrix::zeros(n_new, d);
    let out = embed_targets(base.y.clone(), &fallback, &targets, &[], state, &cfg).unwrap();
    let t_inc = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let full = full_lle_oracle(&x, k, d, eps).unwrap();
    let t_full = t1.elapsed().as_secs_f64();

    // the reconstruction objective is defined over the incremental nodes
    let union_w = knn_weights(&x, k, eps).unwrap();
    let eq7 = |y: &Matrix, rows: std::ops::Range<usize>| rows.map(|i| union_w.residual(y, i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    let (inc_loss, full_loss) = (eq7(&out.y, n_base..n_base + n_new), eq7(&full.y, n_base..n_base + n_new));
    let ratio = inc_loss / full_loss;
    let share = t_inc / t_full;
    let pass = ratio <= ILLE_LOSS_RATIO && share < ILLE_TIME_RATIO;
    verdict(
        5,
        pass,
        format!(
            "300+30 swiss roll k=8, loss over incremental nodes {inc_loss:.3e} vs oracle {full_loss:.3e} (x{ratio:.3}), time {:.1} ms vs {:.1} ms ({:.1}%); \
             whole-union residual (informational) {:.3e} vs {:.3e}",
            t_inc * 1e3,
            t_full * 1e3,
            share * 100.0,
            eq7(&out.y, 0..n_base + n_new),
            eq7(&full.y, 0..n_base + n_new)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_updates_are_disentangled_and_local() {
    let _g = serial();
    let g0 = bipartite(2_000, 1_000, 5, 8, 6);
    let (mcfg, params) = model(&g0, 16);
    let table = embed_all(&g0, &params, &mcfg).unwrap();
    let icfg = IlleConfig::default();
    let state = capture_alignment(&g0, &table.rows, &icfg).unwrap();
    let mut batch = new_users(&g0, 10, 4, 60);
    // two existing users click existing items as well
    for (u, i) in [(5, 17), (900, 3)] {
        let (u, i) = (NodeRef::new(0, u), NodeRef::new(1, i));
        batch.new_edges.push(NewEdge { src: u, dst: i, relation: 0, timestamp: 1 });
        batch.new_edges.push(NewEdge { src: i, dst: u, relation: 1, timestamp: 1 });
    }
    let g1 = apply_increment(&g0, &batch).unwrap();
    let res = ille_update(&g1, &batch, &params, &mcfg, &table, &state, &icfg).unwrap();

    let n_old = g0.num_nodes();
    let mut targets: BTreeSet<usize> = (n_old..g1.num_nodes()).collect();
    for e in &batch.new_edges {
        for n in [e.src, e.dst] {
            if let Some(v) = g0.index_of(n) {
                targets.insert(v);
            }
        }
    }
    let mut allowed = targets.clone();
    for &v in &targets {
        allowed.extend(bfs_neighbors(&g1, v, icfg.k, icfg.rng_seed).unwrap().neighbors);
    }

    let mut violations = Vec::new();
    for (a, b) in params.store.iter().zip(res.params.store.iter()) {
        if a.name == "iel.id_table" {
            let allowed_rows: BTreeSet<usize> = allowed.iter().map(|&v| g1.node(v).intra_id).collect();
            for row in 0..a.value.rows() {
                let same = a.value.row(row).iter().zip(b.value.row(row)).all(|(x, y)| x.to_bits() == y.to_bits());
                if !same && !allowed_rows.contains(&row) {
                    violations.push(format!("id_table row {row}"));
                }
            }
        } else if a.value.data().iter().zip(b.value.data()).any(|(x, y)| x.to_bits() != y.to_bits()) || a.value.shape() != b.value.shape() {
            violations.push(a.name.clone());
        }
    }
    let mut changed_rows = 0;
    for v in 0..n_old {
        if table.row(v) != res.table.row(v) {
            changed_rows += 1;
            if !allowed.contains(&v) {
                violations.push(format!("table row {v}"));
            }
        }
    }
    let pass = violations.is_empty();
    verdict(
        6,
        pass,
        format!("{} of {n_old} existing table rows changed, all within the {}-node update neighborhood; only iel.id_table moved in the model", changed_rows, allowed.len()),
    );
    assert!(pass, "{violations:?}");
}

// ---------------------------------------------------------------- 7

fn planted_config(dir: &Path) -> PipelineConfig {
    let text = "rng_seed = 0\n[paths]\nedges = \"edges.tsv\"\nfeatures = \"features.tsv\"\nschema = \"schema.tsv\"\ntest = \"test.tsv\"\nsnapshot_dir = \"snap\"\n";
    PipelineConfig::from_toml(text, dir).unwrap()
}

#[test]
fn c07_planted_clusters_are_learned() {
    let _g = serial();
    let start = Instant::now();
    let d = tempfile::tempdir().unwrap();
    gen_fixture(&FixtureSpec::planted_default(), d.path(), 7).unwrap();
    let cfg = planted_config(d.path());
    cmd_train(&cfg).unwrap();
    let test = d.path().join("test.tsv");
    let hr = cmd_evaluate(&cfg, None, &test).unwrap().at(10).unwrap().hitrate;
    let secs = start.elapsed().as_secs_f64();

    let store = SnapshotStore::new(&cfg.paths.snapshot_dir);
    let snap = store.load(&store.resolve(None).unwrap()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(70);
    let noise = EmbeddingTable::new(random(snap.graph.num_nodes(), 64, &mut r), 0, 0);
    let null = evaluate_table(&cfg, &snap.graph, &noise, &test).unwrap().at(10).unwrap().hitrate;

    let pass = hr >= PLANTED_HR && (NULL_HR.0..=NULL_HR.1).contains(&null) && secs < PLANTED_BUDGET_S;
    verdict(7, pass, format!("HitRate@10 {hr:.4} vs null {null:.4} (1 pos / 99 neg), train+eval {secs:.1} s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 8 and 10

const DRIFT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct DriftRun {
    /// Post-drift HitRate@10 per batch, updated and frozen.
    updated: Vec<f64>,
    frozen: Vec<f64>,
    update_ms: Vec<f64>,
    train_ms: f64,
}

fn drift_run(seed: u64, k: usize) -> DriftRun {
    let d = tempfile::tempdir().unwrap();
    let files = gen_fixture(&FixtureSpec::drift_default(), d.path(), seed).unwrap();
    let mut cfg = planted_config(d.path());
    cfg.set_seed(seed);
    cfg.ille.k = k;
    let t = Instant::now();
    cmd_train(&cfg).unwrap();
    let train_ms = t.elapsed().as_secs_f64() * 1e3;
    let incs: Vec<(PathBuf, Option<PathBuf>)> = files.increments.iter().map(|(e, f)| (d.path().join(e), Some(d.path().join(f)))).collect();
    let mut tests = vec![d.path().join("test.tsv")];
    tests.extend(files.increment_tests.iter().map(|t| d.path().join(t)));
    let out = cmd_simulate_stream(&cfg, &incs, &tests).unwrap();
    let post = &out.steps[1..];
    assert!(post.iter().all(|s| !s.retrained));
    DriftRun {
        updated: post.iter().map(|s| s.eval.at(10).unwrap().hitrate).collect(),
        frozen: post.iter().map(|s| s.frozen_eval.at(10).unwrap().hitrate).collect(),
        update_ms: post.iter().map(|s| s.update_wall_ms.unwrap()).collect(),
        train_ms,
    }
}

fn drift_runs() -> &'static HashMap<usize, Vec<DriftRun>> {
    static RUNS: OnceLock<HashMap<usize, Vec<DriftRun>>> = OnceLock::new();
    RUNS.get_or_init(|| [6, 8, 10].into_iter().map(|k| (k, DRIFT_SEEDS.iter().map(|&s| drift_run(s, k)).collect())).collect())
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c08_k_sensitivity_direction() {
    let _g = serial();
    let runs = drift_runs();
    let m = |k: usize| mean(runs[&k].iter().flat_map(|r| r.updated.iter().copied()));
    let (m6, m8, m10) = (m(6), m(8), m(10));
    let pass = m8 >= m6;
    let dir10 = if m10 < m8 { "below" } else { "not below" };
    // soft: reported, never a test failure
    verdict(8, pass, format!("mean post-drift HitRate@10 over {} seeds: k=6 {m6:.4}, k=8 {m8:.4}, k=10 {m10:.4} (k=10 {dir10} k=8)", DRIFT_SEEDS.len()));
}

#[test]
fn c10_updates_beat_frozen_snapshot() {
    let _g = serial();
    let runs = &drift_runs()[&8];
    let mut worst_margin = f64::INFINITY;
    let mut worst_share = 0.0f64;
    for r in runs {
        for (u, f) in r.updated.iter().zip(&r.frozen) {
            worst_margin = worst_margin.min(u - f);
        }
        for ms in &r.update_ms {
            worst_share = worst_share.max(ms / r.train_ms);
        }
    }
    let (mu, mf) = (mean(runs.iter().flat_map(|r| r.updated.iter().copied())), mean(runs.iter().flat_map(|r| r.frozen.iter().copied())));
    let pass = worst_margin > 0.0 && worst_share < UPDATE_SHARE;
    verdict(
        10,
        pass,
        format!(
            "{} seeds x 4 batches: updated {mu:.4} vs frozen {mf:.4} mean HitRate@10, smallest margin {worst_margin:.4}; slowest update {:.2}% of a retrain",
            runs.len(),
            worst_share * 100.0
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(lx.iter().copied()), mean(ly.iter().copied()));
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

#[test]
fn c09_scaling() {
    let _g = serial();
    let embed: Vec<f64> = [10_000, 20_000, 40_000]
        .iter()
        .map(|&v| {
            let g = bipartite(v / 2, v / 2, 5, 16, 9);
            let (cfg, p) = model(&g, 32);
            time(5, || embed_all(&g, &p, &cfg).unwrap())
        })
        .collect();

    let g0 = bipartite(5_000, 5_000, 5, 16, 90);
    let (mcfg, params) = model(&g0, 32);
    let table = embed_all(&g0, &params, &mcfg).unwrap();
    let icfg = IlleConfig::default();
    let state = capture_alignment(&g0, &table.rows, &icfg).unwrap();
    let update: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&n| {
            let b = new_users(&g0, n, 6, n as u64);
            let g1 = apply_increment(&g0, &b).unwrap();
            time(5, || ille_update(&g1, &b, &params, &mcfg, &table, &state, &icfg).unwrap())
        })
        .collect();

    let ks = [4.0, 8.0, 16.0];
    let solve: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let k = k as usize;
            let x = points(k + 1, 64, k as u64);
            let nbrs = x.gather_rows(&(1..=k).collect::<Vec<_>>());
            let reps = 2_000;
            time(5, || {
                for _ in 0..reps {
                    std::hint::black_box(reconstruction_weights(x.row(0), &nbrs, 1e-3).unwrap());
                }
            }) / reps as f64
        })
        .collect();
    let slope = log_slope(&ks, &solve);

    let ratios = |t: &[f64]| [t[1] / t[0], t[2] / t[1]];
    let (re, ru) = (ratios(&embed), ratios(&update));
    let pass = re.iter().chain(&ru).all(|&x| x <= SCALE_RATIO) && slope <= K_EXPONENT;
    verdict(
        9,
        pass,
        format!(
            "embed_all x{:.2}, x{:.2} over 10k/20k/40k nodes; ille_update x{:.2}, x{:.2} over 100/200/400 new nodes; weight-solve k-exponent {slope:.2}",
            re[0], re[1], ru[0], ru[1]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 11

/// Needs the Ali-Display click log converted to the edge, feature, schema and
/// test files in `DHGE_ALI_DISPLAY_DIR`. Without it the criterion is reported
/// as blocked.
#[test]
fn c11_public_dataset_target() {
    let Ok(dir) = std::env::var("DHGE_ALI_DISPLAY_DIR") else {
        line(11, "BLOCKED", "Ali-Display is not available offline; set DHGE_ALI_DISPLAY_DIR to a preprocessed copy to run".into());
        return;
    };
    let _g = serial();
    let dir = PathBuf::from(dir);
    let text = "rng_seed = 0\n[paths]\nedges = \"edges.tsv\"\nfeatures = \"features.tsv\"\nschema = \"schema.tsv\"\ntest = \"test.tsv\"\nsnapshot_dir = \"snap\"\n\
                [optim]\nlearning_rate = 5e-4\n[model]\nhidden_dim = 64\nnum_gcn_layers = 3\nbeta_gal = 0.6\n";
    let mut cfg = PipelineConfig::from_toml(text, &dir).unwrap();
    let snap = tempfile::tempdir().unwrap();
    cfg.paths.snapshot_dir = snap.path().to_path_buf();
    let start = Instant::now();
    cmd_train(&cfg).unwrap();
    let hr = cmd_evaluate(&cfg, None, &dir.join("test.tsv")).unwrap().at(10).unwrap().hitrate;
    let secs = start.elapsed().as_secs_f64();
    let pass = hr >= 0.67 && secs < 7200.0;
    verdict(11, pass, format!("Ali-Display HitRate@10 {hr:.4} (1 pos / 99 neg), {secs:.0} s"));
    assert!(pass);
}

// ---------------------------------------------------------------- 12

const SMALL: &str = "kind = \"drift-stream\"\ncommunities = 2\nusers = 60\nitems = 30\np_in = 0.3\np_out = 0.02\nfeature_dim = 4\nbatches = 1\nnew_users_per_batch = 4\ndrifting_users_per_batch = 2\n";

fn small_config(dir: &Path, snapshots: &str) -> PipelineConfig {
    let text = format!(
        "rng_seed = 12\n[paths]\nedges = \"edges.tsv\"\nfeatures = \"features.tsv\"\nschema = \"schema.tsv\"\ntest = \"test.tsv\"\nsnapshot_dir = \"{snapshots}\"\n\
         [model]\nhidden_dim = 8\nbatch_size = 64\n[train]\nepochs = 3\n[eval]\nnegatives_per_user = 20\n"
    );
    std::fs::write(dir.join(format!("{snapshots}.toml")), &text).unwrap();
    PipelineConfig::from_toml(&text, dir).unwrap()
}

fn metrics_json(cfg: &PipelineConfig, test: &Path) -> String {
    cmd_train(cfg).unwrap();
    let mut r = cmd_evaluate(cfg, None, test).unwrap();
    r.wall_ms = 0.0;
    serde_json::to_string(&r).unwrap()
}

/// Every manifest's files exist and match their recorded digests.
fn manifests_intact(store: &SnapshotStore) -> bool {
    store.manifests().unwrap().iter().all(|m| {
        let table = std::fs::read(store.dir().join(&m.table));
        store.load(m).is_ok() && table.is_ok_and(|b| decode_table(&b).is_ok())
    })
}

#[test]
fn c12_determinism_and_persistence() {
    let _g = serial();
    let d = tempfile::tempdir().unwrap();
    let spec: FixtureSpec = toml::from_str(SMALL).unwrap();
    gen_fixture(&spec, d.path(), 12).unwrap();
    let test = d.path().join("test.tsv");
    let (a, b) = (small_config(d.path(), "a"), small_config(d.path(), "b"));
    let same_metrics = metrics_json(&a, &test) == metrics_json(&b, &test);

    let store = SnapshotStore::new(&a.paths.snapshot_dir);
    let m = store.resolve(None).unwrap();
    let model_bytes = std::fs::read(store.dir().join(&m.model)).unwrap();
    let (mc, params) = decode_model(&model_bytes).unwrap();
    let table_bytes = std::fs::read(store.dir().join(&m.table)).unwrap();
    let table = decode_table(&table_bytes).unwrap();
    let round_trip = encode_model(&mc, &params).unwrap() == model_bytes
        && encode_table(&table) == table_bytes
        && params.store.iter().all(|t| t.value.data().iter().all(|&x| (x as f32) as f64 == x));

    // abort after each possible file of a train, then of an update
    let mut clean = true;
    let crash = small_config(d.path(), "crash");
    let crash_store = SnapshotStore::new(&crash.paths.snapshot_dir);
    let run = |args: &[&str], n: usize| {
        Command::new(env!("CARGO_BIN_EXE_dhge"))
            .current_dir(d.path())
            .args(args)
            .env("DHGE_CRASH_AFTER_FILES", n.to_string())
            .env("RUST_LOG", "off")
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap()
    };
    let mut aborted = 0;
    for n in 1..=6 {
        let st = run(&["train", "--config", "crash.toml"], n);
        aborted += usize::from(!st.success());
        let _ = std::fs::remove_file(crash.paths.snapshot_dir.join(".lock"));
        clean &= crash_store.manifests().unwrap().is_empty() && manifests_intact(&crash_store);
    }
    clean &= run(&["train", "--config", "crash.toml"], usize::MAX).success();
    for n in 1..=6 {
        let st = run(&["update", "--config", "crash.toml", "--edges", "increment_0.tsv"], n);
        aborted += usize::from(!st.success());
        let _ = std::fs::remove_file(crash.paths.snapshot_dir.join(".lock"));
        clean &= crash_store.manifests().unwrap().len() == 1 && manifests_intact(&crash_store);
    }
    clean &= run(&["update", "--config", "crash.toml", "--edges", "increment_0.tsv"], usize::MAX).success();
    let versions: Vec<u64> = crash_store.manifests().unwrap().iter().map(|m| m.version).collect();
    clean &= manifests_intact(&crash_store) && versions.len() == 2 && versions[0] < versions[1];

    let pass = same_metrics && round_trip && clean && aborted == 12;
    verdict(
        12,
        pass,
        format!("metric JSON identical across runs: {same_metrics}; f32 snapshot round trip bit-exact: {round_trip}; {aborted} injected aborts, manifests intact: {clean}"),
    );
    assert!(pass);
}


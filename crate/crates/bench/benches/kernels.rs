use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dhge_bench::{bipartite, model, new_users, points};
use dhge_core::eval::cosine_topk;
use dhge_core::graph::apply_increment;
use dhge_core::ille::{capture_alignment, ille_update, reconstruction_weights, IlleConfig};
use dhge_core::model::{embed_all, global_attention, init_features};
use dhge_core::Matrix;

fn gal(c: &mut Criterion) {
    let mut g = c.benchmark_group("global_attention");
    for v in [1_000, 4_000, 16_000] {
        let graph = bipartite(v / 2, v / 2, 5, 16, 1);
        let (cfg, params) = model(&graph, 32);
        let x0 = init_features(&graph, &params, &cfg).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(v), &x0, |b, x0| b.iter(|| global_attention(x0, &params, 0.6).unwrap()));
    }
    g.finish();
}

fn embed(c: &mut Criterion) {
    let mut g = c.benchmark_group("embed_all");
    g.sample_size(10);
    for v in [10_000, 20_000, 40_000] {
        let graph = bipartite(v / 2, v / 2, 5, 16, 2);
        let (cfg, params) = model(&graph, 32);
        g.bench_function(BenchmarkId::from_parameter(v), |b| b.iter(|| embed_all(&graph, &params, &cfg).unwrap()));
    }
    g.finish();
}

fn weights(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruction_weights");
    for k in [4, 8, 16, 32] {
        let x = points(k + 1, 32, k as u64);
        let nbrs = Matrix::from_rows(&(1..=k).map(|i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(k), |b| b.iter(|| reconstruction_weights(x.row(0), &nbrs, 1e-3).unwrap()));
    }
    g.finish();
}

fn ille(c: &mut Criterion) {
    let mut g = c.benchmark_group("ille_update");
    g.sample_size(10);
    let base = bipartite(5_000, 5_000, 5, 16, 3);
    let (mcfg, params) = model(&base, 32);
    let table = embed_all(&base, &params, &mcfg).unwrap();
    let icfg = IlleConfig::default();
    let state = capture_alignment(&base, &table.rows, &icfg).unwrap();
    for n in [50, 100, 200, 400] {
        let batch = new_users(&base, n, 6, n as u64);
        let grown = apply_increment(&base, &batch).unwrap();
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| ille_update(&grown, &batch, &params, &mcfg, &table, &state, &icfg).unwrap())
        });
    }
    g.finish();
}

fn retrieve(c: &mut Criterion) {
    let graph = bipartite(1_000, 20_000, 5, 8, 4);
    let (cfg, params) = model(&graph, 64);
    let table = embed_all(&graph, &params, &cfg).unwrap();
    let items = graph.nodes_of_type(dhge_bench::ITEM);
    c.bench_function("cosine_topk/20000", |b| b.iter(|| cosine_topk(table.row(0), &table, items, 10).unwrap()));
}

criterion_group!(benches, gal, embed, weights, ille, retrieve);
criterion_main!(benches);

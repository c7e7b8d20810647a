use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::layers::forward;
use super::{now_ms, EmbeddingTable, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{minibatch_partition, sample_subgraph, HeteroGraph, Subgraph};
use crate::numcore::{neg_log_sigmoid, Matrix, OptimizerState, Tape, Var, SIGMOID_CLAMP};
use crate::rng::{mix, rng, stream};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub mean_loss: f64,
    pub wall_ms: f64,
    pub seed: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−Σ_pos ln σ(z_i·z_j) − Σ_neg ln σ(−z_i·z_j)` with clamped logits.
pub fn edge_loss(z: &Matrix, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<f64> {
    if pos.len() != neg.len() {
        return Err(Error::PairCountMismatch {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let term = |&(i, j): &(usize, usize), sign: f64| neg_log_sigmoid((sign * dot(z.row(i), z.row(j))).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP));
    Ok(pos.iter().map(|p| term(p, 1.0)).sum::<f64>() + neg.iter().map(|p| term(p, -1.0)).sum::<f64>())
}

pub(crate) fn edge_loss_var(tape: &mut Tape, z: Var, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<Var> {
    if pos.len() != neg.len() {
        return Err(Error::PairCountMismatch {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let side = |tape: &mut Tape, pairs: &[(usize, usize)], sign: f64| -> Result<Var> {
        let a = tape.gather_rows(z, pairs.iter().map(|p| p.0).collect::<Vec<_>>().into());
        let b = tape.gather_rows(z, pairs.iter().map(|p| p.1).collect::<Vec<_>>().into());
        let d = tape.row_dot(a, b)?;
        Ok(tape.neg_log_sigmoid_sum(d, sign))
    };
    let lp = side(tape, pos, 1.0)?;
    let ln = side(tape, neg, -1.0)?;
    tape.add(lp, ln)
}

/// Highest score wins; ties go to the smallest index.
pub fn select_hardest(scored: &[(usize, f64)]) -> Option<usize> {
    scored
        .iter()
        .copied()
        .reduce(|best, c| if c.1 > best.1 || (c.1 == best.1 && c.0 < best.0) { c } else { best })
        .map(|c| c.0)
}

/// Per positive, the hardest of `pool_size` uniformly drawn non-neighbors of
/// the target's type, or `None` when the source touches every candidate.
/// Pairs index rows of `z`; `rows[r]` is the global node of row `r`.
fn negatives(
    pos: &[(usize, usize)],
    z: &Matrix,
    rows: &[usize],
    graph: &HeteroGraph,
    pool_size: usize,
    rng_seed: u64,
) -> Vec<Option<usize>> {
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); graph.num_types()];
    for (r, &g) in rows.iter().enumerate() {
        by_type[graph.node(g).node_type].push(r);
    }
    let pool_size = pool_size.max(1);
    pos.iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let gi = rows[i];
            let cands = &by_type[graph.node(rows[j]).node_type];
            let ok = |c: usize| rows[c] != gi && !graph.adjacent(gi, rows[c]);
            let mut r = rng(rng_seed, stream::NEGATIVE.wrapping_add(k as u64));
            let mut pool = Vec::with_capacity(pool_size);
            let mut attempts = 0;
            while pool.len() < pool_size && attempts < 4 * pool_size + 32 && !cands.is_empty() {
                attempts += 1;
                let c = cands[r.random_range(0..cands.len())];
                if ok(c) {
                    pool.push(c);
                }
            }
            if pool.len() < pool_size {
                let valid: Vec<usize> = cands.iter().copied().filter(|&c| ok(c)).collect();
                if valid.is_empty() {
                    return None;
                }
                while pool.len() < pool_size {
                    pool.push(valid[r.random_range(0..valid.len())]);
                }
            }
            let scored: Vec<(usize, f64)> = pool.iter().map(|&c| (rows[c], dot(z.row(i), z.row(c)))).collect();
            let best = select_hardest(&scored)?;
            pool.into_iter().find(|&c| rows[c] == best)
        })
        .collect()
}

/// Dynamic negative sampling over the rows of `z` (`rows` maps them to global
/// indices; pass `0..V` for a full table).
pub fn dynamic_negative_sample(
    pos: &[(usize, usize)],
    z: &Matrix,
    rows: &[usize],
    graph: &HeteroGraph,
    pool_size: usize,
    rng_seed: u64,
) -> Result<Vec<(usize, usize)>> {
    negatives(pos, z, rows, graph, pool_size, rng_seed)
        .into_iter()
        .zip(pos)
        .map(|(n, &(i, _))| n.map(|c| (i, c)).ok_or(Error::NoNegative(rows[i])))
        .collect()
}

/// Records forward + loss on `sub` without dropout and accumulates gradients
/// into `params`; returns the loss.
pub fn loss_with_grad(
    graph: &HeteroGraph,
    sub: &Subgraph,
    params: &mut ModelParams,
    config: &ModelConfig,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<f64> {
    let mut tape = Tape::new();
    let f = forward(&mut tape, graph, sub, params, config, None)?;
    let loss = edge_loss_var(&mut tape, f.z, pos, neg)?;
    tape.backward(loss, &mut params.store)?;
    Ok(tape.value(loss).item())
}

/// One pass over a shuffled minibatch partition. The optimized objective is
/// the batch's edge loss divided by its positive count.
pub fn train_epoch(
    graph: &HeteroGraph,
    params: &mut ModelParams,
    config: &ModelConfig,
    opt: &mut OptimizerState,
    epoch: u64,
) -> Result<EpochMetrics> {
    if graph.num_edges() == 0 {
        return Err(Error::NoTrainingEdges);
    }
    let start = Instant::now();
    params.ensure_id_rows(graph.max_type_count(), config.rng_seed);
    let seed = mix(config.rng_seed, epoch);
    let mut total = 0.0;
    let mut batches = 0usize;
    for (b, seeds) in minibatch_partition(graph, config.batch_size, seed).iter().enumerate() {
        let sub = sample_subgraph(graph, seeds, config.degree_limit, seed)?;
        let batch_seed = mix(seed, b as u64);
        let mut tape = Tape::new();
        let f = forward(&mut tape, graph, &sub, params, config, Some(batch_seed))?;
        let all_pos: Vec<(usize, usize)> = sub.edges.iter().map(|e| (e.0, e.1)).collect();
        let negs = negatives(&all_pos, tape.value(f.z), &sub.nodes, graph, config.dns_pool_size, batch_seed);
        let (pos, neg): (Vec<_>, Vec<_>) = all_pos
            .iter()
            .zip(negs)
            .filter_map(|(&p, n)| n.map(|c| (p, (p.0, c))))
            .unzip();
        if pos.is_empty() {
            continue;
        }
        let loss = edge_loss_var(&mut tape, f.z, &pos, &neg)?;
        let loss = tape.scale(loss, 1.0 / pos.len() as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        tape.backward(loss, &mut params.store)?;
        opt.step(&mut params.store);
        params.store.zero_grad();
        total += value;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::NoTrainingEdges);
    }
    Ok(EpochMetrics {
        epoch,
        mean_loss: total / batches as f64,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        seed: config.rng_seed,
    })
}

/// Inference forward pass on `sub`; rows in local order.
pub fn embed_subgraph(graph: &HeteroGraph, sub: &Subgraph, params: &ModelParams, config: &ModelConfig) -> Result<Matrix> {
    let mut tape = Tape::new();
    let f = forward(&mut tape, graph, sub, params, config, None)?;
    Ok(tape.value(f.z).clone())
}

/// Embeds every node: consecutive index chunks of `batch_size`, each with its
/// sampled neighborhood. Chunks run on scoped threads; output is independent
/// of the thread count.
pub fn embed_all(graph: &HeteroGraph, params: &ModelParams, config: &ModelConfig) -> Result<EmbeddingTable> {
    let v = graph.num_nodes();
    let d = params.dims().hidden_dim;
    let chunks: Vec<Vec<usize>> = (0..v).collect::<Vec<_>>().chunks(config.batch_size.max(1)).map(<[usize]>::to_vec).collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(chunks.len().max(1));
    let run = |seeds: &[usize]| -> Result<Matrix> {
        let sub = sample_subgraph(graph, seeds, config.degree_limit, config.rng_seed)?;
        embed_subgraph(graph, &sub, params, config)
    };
    let results: Vec<Result<Matrix>> = if threads <= 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<Result<Matrix>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let chunks = &chunks;
                    let run = &run;
                    s.spawn(move || (t..chunks.len()).step_by(threads).map(|i| (i, run(&chunks[i]))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("embedding worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk embedded")).collect()
    };
    let mut out = Matrix::zeros(v, d);
    for (chunk, res) in chunks.iter().zip(results) {
        let z = res?;
        for (local, &g) in chunk.iter().enumerate() {
            out.row_mut(g).copy_from_slice(z.row(local));
        }
    }
    Ok(EmbeddingTable::new(out, 1, now_ms()))
}

use std::collections::BTreeSet;
use std::rc::Rc;

use rand::Rng;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeRef, RelationSchema, Subgraph};
use crate::numcore::{Csr, Matrix, Tape, Var};
use crate::rng::{mix, rng, stream};

/// Handles into one recorded forward pass over a subgraph (rows in local order).
pub(crate) struct Forward {
    pub z: Var,
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, seed: u64) -> Result<Var> {
    if rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - rate);
    let mut g = rng(seed, stream::DROPOUT);
    let data = (0..r * c).map(|_| if g.random::<f64>() < rate { 0.0 } else { keep }).collect();
    let mask = tape.constant(Matrix::from_vec(r, c, data)?);
    tape.hadamard(x, mask)
}

pub(crate) fn input_var(tape: &mut Tape, graph: &HeteroGraph, rows: &[usize], params: &ModelParams, relu: bool) -> Result<Var> {
    let din = graph.feature_dim();
    if din != params.dims().input_dim {
        return Err(Error::Shape {
            op: "init_features",
            lhs: (rows.len(), din),
            rhs: (params.dims().input_dim, params.dims().hidden_dim),
        });
    }
    let n = rows.len();
    let mut raw = Matrix::zeros(n, din);
    let mut mask = Matrix::zeros(n, din);
    let (feats, missing) = (graph.features(), graph.missing_mask());
    for (i, &g) in rows.iter().enumerate() {
        for c in 0..din {
            if missing[g * din + c] {
                mask[(i, c)] = 1.0;
            } else {
                raw[(i, c)] = feats[(g, c)];
            }
        }
    }
    let raw = tape.constant(raw);
    let mask = tape.constant(mask);
    let token = tape.param(&params.store, params.ids.impute);
    let token = tape.broadcast_rows(token, n)?;
    let fill = tape.hadamard(mask, token)?;
    let filled = tape.add(raw, fill)?;
    let w = tape.param(&params.store, params.ids.w_in);
    let b = tape.param(&params.store, params.ids.b_in);
    let proj = tape.matmul(filled, w)?;
    let x0 = tape.add_row_vec(proj, b)?;
    Ok(if relu { tape.relu(x0) } else { x0 })
}

pub(crate) fn iel_var(tape: &mut Tape, nodes: &[NodeRef], params: &ModelParams) -> Result<Var> {
    let id_rows = params.id_table().rows();
    let num_types = params.dims().num_types;
    for n in nodes {
        if n.node_type >= num_types {
            return Err(Error::UnknownNodeType {
                node_type: n.node_type,
                num_types,
            });
        }
        if n.intra_id >= id_rows {
            return Err(Error::UnknownNode(n.node_type, n.intra_id));
        }
    }
    let ids = tape.gather_param_rows(&params.store, params.ids.id_table, nodes.iter().map(|n| n.intra_id).collect());
    let types = tape.gather_param_rows(&params.store, params.ids.type_table, nodes.iter().map(|n| n.node_type).collect());
    tape.add(ids, types)
}

pub(crate) fn gal_var(tape: &mut Tape, x0: Var, params: &ModelParams, beta: f64) -> Result<Var> {
    if beta == 0.0 {
        return Ok(x0);
    }
    let n = tape.value(x0).rows();
    let inv_n = 1.0 / n.max(1) as f64;
    let [wq, wk, wv] = params.ids.gal;
    let (wq, wk, wv) = (tape.param(&params.store, wq), tape.param(&params.store, wk), tape.param(&params.store, wv));
    let q = tape.matmul(x0, wq)?;
    let q = tape.frob_normalize(q);
    let k = tape.matmul(x0, wk)?;
    let k = tape.frob_normalize(k);
    let v = tape.matmul(x0, wv)?;

    let ksum = tape.col_sum(k);
    let ksum_t = tape.transpose(ksum);
    let qk1 = tape.matmul(q, ksum_t)?;
    let qk1 = tape.scale(qk1, inv_n);
    let diag = tape.add_const(qk1, 1.0);
    for (row, &value) in tape.value(diag).data().iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveNormalizer { row, value });
        }
    }
    let kt = tape.transpose(k);
    let ktv = tape.matmul(kt, v)?;
    let qktv = tape.matmul(q, ktv)?;
    let qktv = tape.scale(qktv, inv_n);
    let num = tape.add(v, qktv)?;
    let att = tape.div_rows(num, diag)?;
    let att = tape.scale(att, beta);
    let keep = tape.scale(x0, 1.0 - beta);
    tape.add(att, keep)
}

pub(crate) struct EalOut {
    pub out: Var,
    pub attention: Vec<(usize, Rc<Vec<usize>>, Var)>,
}

fn check_relation(schema: &RelationSchema, r: usize, got: (usize, usize)) -> Result<()> {
    let expected = *schema.relations.get(r).ok_or(Error::UnknownRelation(r))?;
    if expected != got {
        return Err(Error::SchemaMismatch {
            relation: r,
            expected,
            got,
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn eal_var(
    tape: &mut Tape,
    g: Var,
    types: &[usize],
    edges: &[(usize, usize, usize)],
    schema: &RelationSchema,
    params: &ModelParams,
    drop: Option<(f64, u64)>,
) -> Result<EalOut> {
    let n = types.len();
    let d = params.dims().hidden_dim;
    let mut proj: [Option<Var>; 3] = [None; 3];
    for t in 0..params.dims().num_types {
        let idx: Vec<usize> = (0..n).filter(|&i| types[i] == t).collect();
        if idx.is_empty() {
            continue;
        }
        let idx = Rc::new(idx);
        let gt = tape.gather_rows(g, idx.clone());
        for (slot, &w) in proj.iter_mut().zip(&params.ids.type_qkv[t]) {
            let w = tape.param(&params.store, w);
            let p = tape.matmul(gt, w)?;
            let p = tape.scatter_add_rows(p, idx.clone(), n);
            *slot = Some(match *slot {
                Some(acc) => tape.add(acc, p)?,
                None => p,
            });
        }
    }
    let [Some(q), Some(k), Some(v)] = proj else {
        return Ok(EalOut {
            out: g,
            attention: Vec::new(),
        });
    };

    let mut by_rel: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); schema.relations.len()];
    for &(s, t, r) in edges {
        if r >= by_rel.len() {
            return Err(Error::UnknownRelation(r));
        }
        check_relation(schema, r, (types[s], types[t]))?;
        by_rel[r].0.push(s);
        by_rel[r].1.push(t);
    }
    let mut message: Option<Var> = None;
    let mut attention = Vec::new();
    for (r, (src, dst)) in by_rel.into_iter().enumerate() {
        if src.is_empty() {
            continue;
        }
        let (src, dst) = (Rc::new(src), Rc::new(dst));
        let att_w = tape.param(&params.store, params.ids.rel_att[r]);
        let qr = tape.matmul(q, att_w)?;
        let qe = tape.gather_rows(qr, dst.clone());
        let ke = tape.gather_rows(k, src.clone());
        let logit = tape.row_dot(qe, ke)?;
        let logit = tape.scale(logit, 1.0 / (d as f64).sqrt());
        let p = tape.param(&params.store, params.ids.rel_p[r]);
        let logit = tape.mul_scalar(logit, p)?;
        let a = tape.segment_softmax(logit, dst.clone(), n);
        attention.push((r, dst.clone(), a));

        let msg_w = tape.param(&params.store, params.ids.rel_msg[r]);
        let vm = tape.matmul(v, msg_w)?;
        let ve = tape.gather_rows(vm, src);
        let m = tape.mul_rows(ve, a)?;
        let m = tape.scatter_add_rows(m, dst, n);
        message = Some(match message {
            Some(acc) => tape.add(acc, m)?,
            None => m,
        });
    }
    let message = match message {
        Some(m) => m,
        None => tape.constant(Matrix::zeros(n, d)),
    };
    let message = match drop {
        Some((rate, seed)) => dropout(tape, message, rate, seed)?,
        None => message,
    };
    let beta = tape.param(&params.store, params.ids.beta_t);
    let beta = tape.gather_rows(beta, Rc::new(types.to_vec()));
    let neg = tape.scale(beta, -1.0);
    let keep = tape.add_const(neg, 1.0);
    let a = tape.mul_rows(message, beta)?;
    let b = tape.mul_rows(g, keep)?;
    Ok(EalOut {
        out: tape.add(a, b)?,
        attention,
    })
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` over the type-erased undirected edges.
pub(crate) fn gcn_operator(n: usize, edges: &[(usize, usize, usize)]) -> Csr {
    let pairs: BTreeSet<(usize, usize)> = edges
        .iter()
        .filter(|e| e.0 != e.1)
        .map(|&(s, t, _)| (s.min(t), s.max(t)))
        .collect();
    let mut deg = vec![1.0f64; n];
    for &(a, b) in &pairs {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0 / deg[i])).collect();
    for &(a, b) in &pairs {
        let w = 1.0 / (deg[a] * deg[b]).sqrt();
        trip.push((a, b, w));
        trip.push((b, a, w));
    }
    Csr::from_triplets(n, n, trip)
}

pub(crate) fn gcn_var(tape: &mut Tape, x0: Var, edges: &[(usize, usize, usize)], params: &ModelParams) -> Result<Var> {
    let n = tape.value(x0).rows();
    let a = Rc::new(gcn_operator(n, edges));
    let layers = &params.ids.gcn;
    let mut h = x0;
    for (l, &w) in layers.iter().enumerate() {
        let ah = tape.spmm(a.clone(), h)?;
        let w = tape.param(&params.store, w);
        h = tape.matmul(ah, w)?;
        if l + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

fn weighted_sum(tape: &mut Tape, parts: &[(f64, Var)]) -> Result<Var> {
    let mut z: Option<Var> = None;
    for &(w, v) in parts {
        let s = tape.scale(v, w);
        z = Some(match z {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    z.ok_or_else(|| Error::Config("fusion weights must not all be zero".into()))
}

/// Records the whole model on `sub`. `train_seed` enables dropout.
pub(crate) fn forward(
    tape: &mut Tape,
    graph: &HeteroGraph,
    sub: &Subgraph,
    params: &ModelParams,
    config: &ModelConfig,
    train_seed: Option<u64>,
) -> Result<Forward> {
    let nodes: Vec<NodeRef> = sub.nodes.iter().map(|&g| graph.node(g)).collect();
    let types: Vec<usize> = nodes.iter().map(|n| n.node_type).collect();
    let drop = train_seed.filter(|_| config.dropout > 0.0).map(|s| (config.dropout, s));

    let mut x0 = input_var(tape, graph, &sub.nodes, params, config.input_relu)?;
    if let Some((rate, s)) = drop {
        x0 = dropout(tape, x0, rate, mix(s, 1))?;
    }
    let [w_iel, w_eal, w_gnn] = config.fusion_weights;
    let mut parts = Vec::new();
    if w_iel > 0.0 {
        parts.push((w_iel, iel_var(tape, &nodes, params)?));
    }
    if w_eal > 0.0 {
        let g = gal_var(tape, x0, params, config.beta_gal)?;
        let e = eal_var(tape, g, &types, &sub.edges, graph.schema(), params, drop.map(|(r, s)| (r, mix(s, 2))))?;
        parts.push((w_eal, e.out));
    }
    if w_gnn > 0.0 {
        parts.push((w_gnn, gcn_var(tape, x0, &sub.edges, params)?));
    }
    let z = weighted_sum(tape, &parts)?;
    Ok(Forward { z })
}

/// Projected, imputed input features of every node, in global order, no dropout.
pub fn init_features(graph: &HeteroGraph, params: &ModelParams, config: &ModelConfig) -> Result<Matrix> {
    let mut tape = Tape::new();
    let rows: Vec<usize> = (0..graph.num_nodes()).collect();
    let x0 = input_var(&mut tape, graph, &rows, params, config.input_relu)?;
    Ok(tape.value(x0).clone())
}

/// `id_table[intra_id] + type_table[node_type]` for each node.
pub fn identity_embed(nodes: &[NodeRef], params: &ModelParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = iel_var(&mut tape, nodes, params)?;
    Ok(tape.value(v).clone())
}

/// Linear global attention blended with its input by `beta`.
pub fn global_attention(x0: &Matrix, params: &ModelParams, beta: f64) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.constant(x0.clone());
    let g = gal_var(&mut tape, x, params, beta)?;
    Ok(tape.value(g).clone())
}

fn local_types(graph: &HeteroGraph, sub: &Subgraph) -> Vec<usize> {
    sub.nodes.iter().map(|&g| graph.node(g).node_type).collect()
}

/// Edge attention over `sub`; row `i` of `g` belongs to local node `i`.
pub fn edge_attention(g: &Matrix, graph: &HeteroGraph, sub: &Subgraph, params: &ModelParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let gv = tape.constant(g.clone());
    let e = eal_var(&mut tape, gv, &local_types(graph, sub), &sub.edges, graph.schema(), params, None)?;
    Ok(tape.value(e.out).clone())
}

/// Attention weights as `(relation, [(src_local, dst_local, weight)])`.
pub fn edge_attention_weights(
    g: &Matrix,
    graph: &HeteroGraph,
    sub: &Subgraph,
    params: &ModelParams,
) -> Result<Vec<(usize, Vec<(usize, usize, f64)>)>> {
    let mut tape = Tape::new();
    let gv = tape.constant(g.clone());
    let e = eal_var(&mut tape, gv, &local_types(graph, sub), &sub.edges, graph.schema(), params, None)?;
    Ok(e.attention
        .iter()
        .map(|(r, _, a)| {
            let w = tape.value(*a).data();
            let rel_edges = sub.edges.iter().filter(|e| e.2 == *r);
            (*r, rel_edges.zip(w).map(|(e, &w)| (e.0, e.1, w)).collect())
        })
        .collect())
}

/// GCN branch over `sub` with `x0` rows in local order.
pub fn gcn_forward(x0: &Matrix, sub: &Subgraph, params: &ModelParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.constant(x0.clone());
    let h = gcn_var(&mut tape, x, &sub.edges, params)?;
    Ok(tape.value(h).clone())
}

/// `w_iel·iel + w_eal·eal + w_gnn·gnn`.
pub fn fuse(iel: &Matrix, eal: &Matrix, gnn: &Matrix, weights: [f64; 3]) -> Result<Matrix> {
    let mut z = iel.scale(weights[0]);
    z = z.add(&eal.scale(weights[1]))?;
    z.add(&gnn.scale(weights[2]))
}

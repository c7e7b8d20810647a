//! Alignment state file: `DHGA`, u32 format version, u64 static node count,
//! then `Λ`, the per-node Gram, `S` and `P` (u64 rows, u64 cols, f64 data
//! each), then u64 weight-row count and per row a u32 entry count followed by
//! (u64 column, f64 weight) pairs. Little-endian throughout.

use std::path::Path;

use super::refine::AlignmentState;
use super::weights::SparseWeights;
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};
use crate::model::snapshot::{Reader, MODEL_FORMAT_VERSION};
use crate::numcore::Matrix;

const MAGIC: &[u8; 4] = b"DHGA";

fn push_matrix(out: &mut Vec<u8>, m: &Matrix) {
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn f64_of(r: &mut Reader<'_>) -> Result<f64> {
    Ok(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")))
}

fn matrix(r: &mut Reader<'_>) -> Result<Matrix> {
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let n = rows.checked_mul(cols).filter(|n| n.checked_mul(8).is_some()).ok_or_else(|| Error::Snapshot("matrix too large".into()))?;
    let data = r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Matrix::from_vec(rows, cols, data).map_err(|_| Error::NonFinite("alignment state"))
}

pub fn encode_alignment(state: &AlignmentState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.static_nodes as u64).to_le_bytes());
    for m in [&state.lambda, &state.gram_per_node, state.s(), state.p()] {
        push_matrix(&mut out, m);
    }
    out.extend_from_slice(&(state.weights.len() as u64).to_le_bytes());
    for i in 0..state.weights.len() {
        let row = state.weights.row(i);
        out.extend_from_slice(&(row.len() as u32).to_le_bytes());
        for &(j, w) in row {
            out.extend_from_slice(&(j as u64).to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn decode_alignment(bytes: &[u8]) -> Result<AlignmentState> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic, expected DHGA".into()));
    }
    let v = r.u32()?;
    if v != MODEL_FORMAT_VERSION {
        return Err(Error::Snapshot(format!("unsupported format version {v}")));
    }
    let static_nodes = r.u64()? as usize;
    let lambda = matrix(&mut r)?;
    let gram = matrix(&mut r)?;
    let s = matrix(&mut r)?;
    let p = matrix(&mut r)?;
    let d = lambda.rows();
    if [lambda.shape(), gram.shape(), s.shape(), p.shape()].iter().any(|&sh| sh != (d, d)) {
        return Err(Error::Snapshot("alignment matrices are not all D × D".into()));
    }
    let n = r.u64()? as usize;
    let mut w = SparseWeights::new(0);
    let mut rows = Vec::new();
    for i in 0..n {
        let len = r.u32()? as usize;
        let mut row = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            let j = r.u64()? as usize;
            if j >= n {
                return Err(Error::Snapshot(format!("weight column {j} out of range")));
            }
            row.push((j, f64_of(&mut r)?));
        }
        rows.push((i, row));
    }
    if !r.done() {
        return Err(Error::Snapshot("trailing bytes".into()));
    }
    w.grow(n);
    for (i, row) in rows {
        w.set_row(i, row);
    }
    Ok(AlignmentState::from_parts(lambda, gram, static_nodes, w, s, p))
}

pub fn save_alignment(path: &Path, state: &AlignmentState) -> Result<()> {
    atomic_write(path, &encode_alignment(state))
}

pub fn load_alignment(path: &Path) -> Result<AlignmentState> {
    decode_alignment(&read(path)?)
}

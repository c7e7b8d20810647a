//! Binary model and table snapshots. All integers little-endian; reals are
//! stored as 32-bit floats.
//!
//! Model: `DHGM`, u32 format version, u32 config length, config text
//! (`key = value` lines), then tensors until end of file, each as u32 name
//! length, name, u64 rows, u64 cols, row-major f32 data.
//!
//! Table: `DHGT`, u32 format version, u64 table version, i64 timestamp ms,
//! u64 rows, u64 cols, row-major f32 data.

use std::path::Path;

use super::{EmbeddingTable, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};
use crate::numcore::{Matrix, ParamStore};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 4] = b"DHGM";
const TABLE_MAGIC: &[u8; 4] = b"DHGT";

fn push_matrix(out: &mut Vec<u8>, m: &Matrix) {
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Snapshot("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows.checked_mul(cols).filter(|n| n.checked_mul(4).is_some()).ok_or_else(|| Error::Snapshot("tensor too large".into()))?;
        let bytes = self.take(n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Matrix::from_vec(rows, cols, data).map_err(|_| Error::NonFinite("snapshot tensor"))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        if self.take(4)? != want {
            return Err(Error::Snapshot(format!("bad magic, expected {}", String::from_utf8_lossy(want))));
        }
        let v = self.u32()?;
        if v != MODEL_FORMAT_VERSION {
            return Err(Error::Snapshot(format!("unsupported format version {v}")));
        }
        Ok(())
    }
}

pub fn encode_model(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for t in params.store.iter() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        push_matrix(&mut out, &t.value);
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Snapshot(e.to_string()))?;
    let config: ModelConfig = toml::from_str(text).map_err(|e| Error::Snapshot(format!("config block: {e}")))?;
    let mut store = ParamStore::new();
    while !r.done() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Snapshot(e.to_string()))?.to_string();
        let m = r.matrix()?;
        store.add(&name, m);
    }
    Ok((config, ModelParams::from_store(store)?))
}

pub fn encode_table(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&table.version.to_le_bytes());
    out.extend_from_slice(&table.timestamp_ms.to_le_bytes());
    push_matrix(&mut out, &table.rows);
    out
}

pub fn decode_table(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(TABLE_MAGIC)?;
    let version = r.u64()?;
    let timestamp_ms = r.u64()? as i64;
    let rows = r.matrix()?;
    if !r.done() {
        return Err(Error::Snapshot("trailing bytes after table".into()));
    }
    Ok(EmbeddingTable::new(rows, version, timestamp_ms))
}

pub fn save_model(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    atomic_write(path, &encode_model(config, params)?)
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    decode_model(&read(path)?)
}

pub fn save_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    atomic_write(path, &encode_table(table))
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    decode_table(&read(path)?)
}

//! Versioned snapshot directory.
//!
//! Layout: `<dir>/v000001/` holds the model, table, alignment state and the
//! graph the version was built on; `manifest.json` inside it is written last
//! and atomically, so a version without a manifest is an aborted write and is
//! ignored. `<dir>/.lock` serializes writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};
use crate::graph::{load_graph_ordered, parse_schema, write_edges, write_features, write_schema, HeteroGraph};
use crate::ille::{decode_alignment, encode_alignment, AlignmentState, UpdateReport};
use crate::model::{decode_model, decode_table, encode_model, encode_table, EmbeddingTable, ModelConfig, ModelParams};

pub const MANIFEST: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.dhgm";
pub const TABLE_FILE: &str = "table.dhgt";
pub const ALIGNMENT_FILE: &str = "alignment.dhga";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const SCHEMA_FILE: &str = "schema.tsv";

/// Set to `n` to abort the process after the `n`-th snapshot file is written;
/// used to check that interrupted writes never publish a manifest.
pub const CRASH_ENV: &str = "DHGE_CRASH_AFTER_FILES";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotKind {
    Static,
    Incremental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub version: u64,
    pub created_ms: i64,
    pub kind: SnapshotKind,
    pub parent: Option<u64>,
    /// Paths relative to the snapshot directory.
    pub model: String,
    pub table: String,
    pub alignment: String,
    pub edges: String,
    pub features: String,
    pub schema: String,
    pub config_digest: String,
    pub model_sha256: String,
    pub table_sha256: String,
    /// Increment batches consumed since the last static version.
    pub increments_applied: usize,
    pub update_report: Option<UpdateReport>,
}

/// Everything a version carries.
pub struct Snapshot {
    pub manifest: SnapshotManifest,
    pub graph: HeteroGraph,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub table: EmbeddingTable,
    pub alignment: AlignmentState,
}

pub struct SnapshotStore {
    dir: PathBuf,
}

/// Held while a command writes; removes the lock file on drop.
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn version_dir(v: u64) -> String {
    format!("v{v:06}")
}

impl SnapshotStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SnapshotStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lock(&self) -> Result<StoreLock> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(self.dir.clone())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Published manifests in version order.
    pub fn manifests(&self) -> Result<Vec<SnapshotManifest>> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&self.dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let path = entry.path().join(MANIFEST);
            if path.is_file() {
                let m: SnapshotManifest = serde_json::from_slice(&read(&path)?).map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))?;
                out.push(m);
            }
        }
        out.sort_by_key(|m| m.version);
        Ok(out)
    }

    pub fn latest(&self) -> Result<Option<SnapshotManifest>> {
        Ok(self.manifests()?.pop())
    }

    pub fn manifest(&self, version: u64) -> Result<SnapshotManifest> {
        let path = self.dir.join(version_dir(version)).join(MANIFEST);
        if !path.is_file() {
            return Err(Error::Snapshot(format!("no published version {version} in {}", self.dir.display())));
        }
        serde_json::from_slice(&read(&path)?).map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))
    }

    /// The named version, or the newest when `None`.
    pub fn resolve(&self, version: Option<u64>) -> Result<SnapshotManifest> {
        match version {
            Some(v) => self.manifest(v),
            None => self.latest()?.ok_or_else(|| Error::Snapshot(format!("no snapshot in {}", self.dir.display()))),
        }
    }

    /// Next free version tag: one past anything on disk, published or not.
    fn next_version(&self) -> Result<u64> {
        let mut max = 0;
        if let Ok(entries) = fs::read_dir(&self.dir) {
            for e in entries.flatten() {
                if let Some(v) = e.file_name().to_str().and_then(|n| n.strip_prefix('v')).and_then(|n| n.parse::<u64>().ok()) {
                    max = max.max(v);
                }
            }
        }
        Ok(max + 1)
    }

    pub fn table(&self, m: &SnapshotManifest) -> Result<EmbeddingTable> {
        decode_table(&read(&self.dir.join(&m.table))?)
    }

    pub fn graph(&self, m: &SnapshotManifest) -> Result<HeteroGraph> {
        let schema = parse_schema(&read(&self.dir.join(&m.schema))?[..])?;
        load_graph_ordered(&read(&self.dir.join(&m.edges))?[..], &read(&self.dir.join(&m.features))?[..], schema)
    }

    pub fn load(&self, m: &SnapshotManifest) -> Result<Snapshot> {
        let model_bytes = read(&self.dir.join(&m.model))?;
        if sha(&model_bytes) != m.model_sha256 {
            return Err(Error::Snapshot(format!("model file of version {} does not match its manifest digest", m.version)));
        }
        let (config, params) = decode_model(&model_bytes)?;
        let table = self.table(m)?;
        let alignment = decode_alignment(&read(&self.dir.join(&m.alignment))?)?;
        Ok(Snapshot {
            manifest: m.clone(),
            graph: self.graph(m)?,
            config,
            params,
            table,
            alignment,
        })
    }

    /// Writes a new version and returns its manifest. Requires the lock.
    #[allow(clippy::too_many_arguments)]
    pub fn publish(
        &self,
        _lock: &StoreLock,
        kind: SnapshotKind,
        parent: Option<u64>,
        graph: &HeteroGraph,
        config: &ModelConfig,
        params: &ModelParams,
        table: &EmbeddingTable,
        alignment: &AlignmentState,
        config_digest: String,
        increments_applied: usize,
        update_report: Option<UpdateReport>,
    ) -> Result<SnapshotManifest> {
        let version = self.next_version()?;
        let vd = version_dir(version);
        let crash_after: Option<usize> = std::env::var(CRASH_ENV).ok().and_then(|s| s.parse().ok());
        let mut written = 0usize;
        let mut put = |name: &str, bytes: &[u8]| -> Result<String> {
            let rel = format!("{vd}/{name}");
            atomic_write(&self.dir.join(&rel), bytes)?;
            written += 1;
            if crash_after == Some(written) {
                std::process::abort();
            }
            Ok(rel)
        };
        let model_bytes = encode_model(config, params)?;
        let table_bytes = encode_table(table);
        let (mut e, mut f, mut s) = (Vec::new(), Vec::new(), Vec::new());
        write_edges(graph, &mut e).map_err(|err| Error::io(EDGES_FILE, err))?;
        write_features(graph, &mut f).map_err(|err| Error::io(FEATURES_FILE, err))?;
        write_schema(graph.schema(), &mut s).map_err(|err| Error::io(SCHEMA_FILE, err))?;
        let manifest = SnapshotManifest {
            version,
            created_ms: table.timestamp_ms,
            kind,
            parent,
            edges: put(EDGES_FILE, &e)?,
            features: put(FEATURES_FILE, &f)?,
            schema: put(SCHEMA_FILE, &s)?,
            model: put(MODEL_FILE, &model_bytes)?,
            table: put(TABLE_FILE, &table_bytes)?,
            alignment: put(ALIGNMENT_FILE, &encode_alignment(alignment))?,
            config_digest,
            model_sha256: sha(&model_bytes),
            table_sha256: sha(&table_bytes),
            increments_applied,
            update_report,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        atomic_write(&self.dir.join(&vd).join(MANIFEST), &json)?;
        Ok(manifest)
    }
}

/// Every manifest's parent is published and older.
pub fn check_chain(manifests: &[SnapshotManifest]) -> Result<()> {
    for m in manifests {
        if let Some(p) = m.parent {
            if p >= m.version || !manifests.iter().any(|o| o.version == p) {
                return Err(Error::Snapshot(format!("version {} has a broken parent link {p}", m.version)));
            }
        }
    }
    Ok(())
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown node type {node_type} (graph has {num_types} types)")]
    UnknownNodeType { node_type: usize, num_types: usize },

    #[error("unknown relation {0}")]
    UnknownRelation(usize),

    #[error("relation {relation} expects {expected:?} endpoint types, got {got:?}")]
    SchemaMismatch {
        relation: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("self-loop on node ({0}, {1})")]
    SelfLoop(usize, usize),

    #[error("intra_id gap in node type {node_type}: id {missing} never appears")]
    IdGap { node_type: usize, missing: usize },

    #[error("dangling endpoint ({0}, {1})")]
    DanglingEndpoint(usize, usize),

    #[error("intra_id collision for node ({0}, {1})")]
    IdCollision(usize, usize),

    #[error("node ({0}, {1}) not in graph")]
    UnknownNode(usize, usize),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("attention normalizer has non-positive entry {value} at row {row}")]
    NonPositiveNormalizer { row: usize, value: f64 },

    #[error("no recorded forward pass to differentiate")]
    NoForwardPass,

    #[error("no training edges")]
    NoTrainingEdges,

    #[error("node {0} is connected to every candidate of the target type; no negative exists")]
    NoNegative(usize),

    #[error("negative count {neg} differs from positive count {pos}")]
    PairCountMismatch { pos: usize, neg: usize },

    #[error("node {0} is isolated")]
    ColdIsolated(usize),

    #[error("fixed-point sweeps did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("zero-norm query cannot be ranked")]
    UnrankableQuery,

    #[error("empty user set")]
    EmptyUsers,

    #[error("user {0} has no relevant items")]
    EmptyTruth(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error("snapshot directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Locked(_) => 2,
            Error::NonFinite(_)
            | Error::Singular(_)
            | Error::NonPositiveNormalizer { .. }
            | Error::NonConvergence { .. }
            | Error::Eigen(_)
            | Error::NoForwardPass => 4,
            _ => 3,
        }
    }
}

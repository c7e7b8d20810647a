//! Two-stage dynamic heterogeneous graph embedding.
//!
//! A linear-complexity heterogeneous graph transformer is trained
//! periodically on the full graph ([`model`]); between retrains, new nodes and
//! edges are embedded on the CPU by incremental locally linear embedding
//! ([`ille`]), which writes its results back into the model's identity table
//! only. [`eval`] ranks items by cosine similarity and computes HitRate,
//! Recall, and NDCG; [`pipeline`] ties the stages together behind snapshots.

pub mod error;
pub mod eval;
pub mod fsutil;
pub mod graph;
pub mod ille;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{HeteroGraph, IncrementBatch, NodeRef, RelationSchema, Subgraph};
pub use numcore::Matrix;

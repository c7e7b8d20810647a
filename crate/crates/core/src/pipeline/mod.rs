//! The two-phase workflow behind snapshots: static training, incremental
//! updates, evaluation, retrieval, stream simulation, and fixture generation.

mod commands;
mod config;
mod fixtures;
mod store;


pub use commands::{
    cmd_evaluate, cmd_retrieve, cmd_simulate_stream, cmd_train, cmd_update, evaluate_table, StreamOutcome, StreamStep,
    TrainOutcome, UpdateOutcome,
};
pub use config::{Paths, PipelineConfig, Roles, TrainConfig};
pub use fixtures::{gen_fixture, FixtureFiles, FixtureSpec, SCHEMA_TSV};
pub use store::{
    check_chain, Snapshot, SnapshotKind, SnapshotManifest, SnapshotStore, StoreLock, ALIGNMENT_FILE, CRASH_ENV, MANIFEST,
    MODEL_FILE, TABLE_FILE,
};

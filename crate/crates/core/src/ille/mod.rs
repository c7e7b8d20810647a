//! Incremental locally linear embedding: neighbor sampling, reconstruction
//! weights, increment solves, spectral refinement and IEL write-back.

mod increment;
mod lle;
mod neighbors;
mod refine;
mod state_io;
mod update;
mod weights;


pub use increment::{embed_increment, IncrementSolution, Reconstruction, MAX_SWEEPS, SWEEP_TOL};
pub use lle::{alignment_matrix, full_lle_oracle, LleSolution};
pub use neighbors::{bfs_neighbors, NeighborSample};
pub use refine::{incremental_refine, AlignmentProblem, AlignmentState, RefineOutcome, MAX_HALVINGS};
pub use state_io::{decode_alignment, encode_alignment, load_alignment, save_alignment};
pub use update::{
    capture_alignment, disentangled_update, embed_targets, ille_embed, ille_update, EmbedOutcome, IlleConfig, IlleResult,
    Target, UpdateReport, WeightSpace,
};
pub use weights::{knn, knn_weights, reconstruction_loss, reconstruction_weights, residual_blend, SparseWeights};

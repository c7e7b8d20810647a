//! The static-phase model: input projection with imputation, identity
//! embeddings, linear global attention, type-aware edge attention, a GCN
//! branch, and weighted fusion, trained with an edge loss and hard negatives.

mod layers;
mod params;
pub(crate) mod snapshot;
mod train;

use serde::{Deserialize, Serialize};

pub use layers::{
    edge_attention, edge_attention_weights, fuse, gcn_forward, global_attention, identity_embed,
    init_features,
};
pub use params::{ModelDims, ModelParams};
pub use snapshot::{
    decode_model, decode_table, encode_model, encode_table, load_model, load_table, save_model,
    save_table, MODEL_FORMAT_VERSION,
};
pub use train::{
    dynamic_negative_sample, edge_loss, embed_all, embed_subgraph, loss_with_grad, select_hardest,
    train_epoch,
    EpochMetrics,
};


use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Raw feature width; 0 means "take it from the graph".
    pub input_dim: usize,
    pub num_gcn_layers: usize,
    /// Fixed residual ratio of the global attention layer.
    pub beta_gal: f64,
    /// `(w_iel, w_eal, w_gnn)`.
    pub fusion_weights: [f64; 3],
    pub dropout: f64,
    pub degree_limit: usize,
    pub dns_pool_size: usize,
    pub batch_size: usize,
    /// Apply relu after the input projection.
    pub input_relu: bool,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            input_dim: 0,
            num_gcn_layers: 3,
            beta_gal: 0.6,
            fusion_weights: [1.0, 1.0, 1.0],
            dropout: 0.5,
            degree_limit: 10,
            dns_pool_size: 32,
            batch_size: 512,
            input_relu: false,
            rng_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.beta_gal) {
            return bad("beta_gal must lie in [0, 1]");
        }
        if self.fusion_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("fusion weights must be nonnegative");
        }
        if self.fusion_weights.iter().all(|&w| w == 0.0) {
            return bad("fusion weights must not all be zero");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.dns_pool_size == 0 {
            return bad("dns_pool_size must be at least 1");
        }
        if self.degree_limit == 0 || self.batch_size == 0 {
            return bad("degree_limit and batch_size must be at least 1");
        }
        Ok(())
    }
}

/// One embedding row per global node index, plus a version tag.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Matrix,
    pub version: u64,
    pub timestamp_ms: i64,
}

impl EmbeddingTable {
    pub fn new(rows: Matrix, version: u64, timestamp_ms: i64) -> Self {
        EmbeddingTable {
            rows,
            version,
            timestamp_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, v: usize) -> &[f64] {
        self.rows.row(v)
    }
}

pub(crate) fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = ModelConfig::default();
        c.fusion_weights = [0.0; 3];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.beta_gal = 1.5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.hidden_dim = 0;
        assert!(c.validate().is_err());
    }
}

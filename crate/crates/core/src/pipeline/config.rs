use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvalProtocol;
use crate::ille::IlleConfig;
use crate::model::ModelConfig;
use crate::numcore::OptimizerConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub edges: PathBuf,
    pub features: Option<PathBuf>,
    pub schema: PathBuf,
    pub increments: Vec<PathBuf>,
    pub test: Option<PathBuf>,
    pub snapshot_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u64,
    /// Retrain from fresh parameters instead of the newest snapshot's.
    pub cold_start_retrain: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            cold_start_retrain: false,
        }
    }
}

/// Which node types play user and item in evaluation and retrieval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub user_type: usize,
    pub item_type: usize,
}

impl Default for Roles {
    fn default() -> Self {
        Roles { user_type: 0, item_type: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Feeds every stage; the per-section `rng_seed` keys are overwritten.
    pub rng_seed: u64,
    pub static_refresh_every: usize,
    pub paths: Paths,
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
    pub train: TrainConfig,
    pub ille: IlleConfig,
    pub eval: EvalProtocol,
    pub roles: Roles,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rng_seed: 0,
            static_refresh_every: 24,
            paths: Paths::default(),
            model: ModelConfig::default(),
            optim: OptimizerConfig::default(),
            train: TrainConfig::default(),
            ille: IlleConfig::default(),
            eval: EvalProtocol::default(),
            roles: Roles::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML; unknown keys are errors. Relative paths resolve against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let p = &mut c.paths;
        rebase(base_dir, &mut p.edges);
        rebase(base_dir, &mut p.schema);
        rebase(base_dir, &mut p.snapshot_dir);
        for x in p.features.iter_mut().chain(p.test.iter_mut()).chain(p.increments.iter_mut()) {
            rebase(base_dir, x);
        }
        c.set_seed(c.rng_seed);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.model.rng_seed = seed;
        self.ille.rng_seed = seed;
        self.eval.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.static_refresh_every == 0 {
            return Err(Error::Config("static_refresh_every must be at least 1".into()));
        }
        if self.paths.snapshot_dir.as_os_str().is_empty() {
            return Err(Error::Config("paths.snapshot_dir is required".into()));
        }
        if !(self.optim.learning_rate >= 0.0 && self.optim.learning_rate.is_finite()) {
            return Err(Error::Config("optim.learning_rate must be finite and nonnegative".into()));
        }
        self.model.validate()?;
        self.ille.validate()?;
        self.eval.validate()
    }

    /// Paths that must exist before a static train from input files.
    pub fn check_inputs(&self) -> Result<()> {
        let mut need = vec![&self.paths.edges, &self.paths.schema];
        need.extend(self.paths.features.iter());
        for p in need {
            if p.as_os_str().is_empty() || !p.exists() {
                return Err(Error::Config(format!("input path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering of everything except paths.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

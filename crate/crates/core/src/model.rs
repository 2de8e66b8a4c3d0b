//! Generator + field weights with their architecture.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::ParamStore;
use crate::error::Result;
use crate::field::init_field;
use crate::generator::{init_generator, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh weights drawn from `cfg.seed`.
    pub fn init(cfg: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = init_generator(&cfg, &mut rng)?;
        params.merge(init_field(&cfg, &mut rng));
        Ok(Self { cfg, params })
    }

    /// Architecture sidecar written next to a weight file.
    pub fn config_path(weights: &Path) -> PathBuf {
        weights.with_extension("json")
    }

    /// Writes the M2TW weights and the JSON architecture sidecar.
    pub fn save(&self, weights: &Path) -> Result<()> {
        self.params.save(weights)?;
        std::fs::write(Self::config_path(weights), serde_json::to_string_pretty(&self.cfg)? + "\n")?;
        Ok(())
    }

    /// Reads weights and sidecar; a missing sidecar means the default architecture.
    pub fn load(weights: &Path) -> Result<Self> {
        let params = ParamStore::load(weights)?;
        let side = Self::config_path(weights);
        let cfg = if side.exists() {
            serde_json::from_str(&std::fs::read_to_string(side)?)?
        } else {
            ModelConfig::default()
        };
        Ok(Self { cfg, params })
    }
}

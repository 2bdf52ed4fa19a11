//! Whole-run configuration loaded from one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterConfig;
use crate::consistency::ConsistencyConfig;
use crate::error::{Error, Result};
use crate::estimate::{Mode, PipelineConfig, RansacConfig};
use crate::eval::SuccessThresholds;
use crate::featnet::NetConfig;
use crate::prune::PruneConfig;
use crate::scenegen::GenConfig;
use crate::seed;
use crate::trainer::LossConfig;

pub const CONFIG_ENV: &str = "MIREG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. Scene, training, pair and pipeline seeds are derived from it.
    pub seed: u64,
    pub mode: Mode,
    /// Scene generator settings; `gen.seed` is replaced by derived seeds.
    pub gen: GenConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub consistency: ConsistencyConfig,
    pub prune: PruneConfig,
    pub cluster: ClusterConfig,
    pub ransac: RansacConfig,
    pub thresholds: SuccessThresholds,
    /// Inputs are downsampled to this many correspondences before inference.
    pub num_correspondences: usize,
    pub num_scenes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Deep,
            gen: GenConfig::default(),
            net: NetConfig::default(),
            loss: LossConfig::default(),
            consistency: ConsistencyConfig::default(),
            prune: PruneConfig::default(),
            cluster: ClusterConfig::default(),
            ransac: RansacConfig::default(),
            thresholds: SuccessThresholds::default(),
            num_correspondences: 1000,
            num_scenes: 50,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.net.validate()?;
        self.loss.validate()?;
        self.thresholds.validate()?;
        self.pipeline().validate()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            num_correspondences: self.num_correspondences,
            consistency: self.consistency.clone(),
            prune: self.prune.clone(),
            cluster: self.cluster.clone(),
            ransac: self.ransac.clone(),
        }
    }

    /// Generator for evaluation scenes.
    pub fn test_gen(&self) -> GenConfig {
        GenConfig { seed: seed::stream(self.seed, "test"), ..self.gen.clone() }
    }

    /// Generator for training scenes; disjoint from [`Self::test_gen`].
    pub fn train_gen(&self) -> GenConfig {
        GenConfig { seed: seed::stream(self.seed, "train"), ..self.gen.clone() }
    }

    pub fn train_seed(&self) -> u64 {
        seed::stream(self.seed, "train-pairs")
    }

    /// Pipeline seed for evaluation scene `index`.
    pub fn scene_pipeline_seed(&self, index: u64) -> u64 {
        seed::child(seed::stream(self.seed, "pipeline"), index)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Explicit path first, then `MIREG_CONFIG`, then defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}

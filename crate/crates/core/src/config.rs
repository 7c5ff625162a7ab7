//! Run configuration: TOML file with CLI-overridable fields. Defaults mirror
//! the standard training recipe (300 epochs, lr 0.001 switching to 0.0001 at
//! epoch 200, batch 256, M = 60).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gnn::GnnConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub drugs: PathBuf,
    pub pairs: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            drugs: "drugs.csv".into(),
            pairs: "pairs.csv".into(),
            checkpoint: "model.ckpt".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrStage {
    pub start_epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: Vec<LrStage>,
    /// Number of learnable substructure patterns (M).
    pub patterns: usize,
    pub gnn: GnnConfig,
    pub augment: bool,
    /// Train on both drug orderings of every sample.
    pub both_orders: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            seed: 0,
            epochs: 300,
            batch_size: 256,
            lr_schedule: vec![
                LrStage { start_epoch: 0, lr: 1e-3 },
                LrStage { start_epoch: 200, lr: 1e-4 },
            ],
            patterns: 60,
            gnn: GnnConfig::default(),
            augment: true,
            both_orders: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epochs must be > 0".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be > 0".into());
        }
        if self.patterns == 0 {
            return Err("patterns must be > 0".into());
        }
        if self.lr_schedule.is_empty() {
            return Err("lr_schedule must have at least one stage".into());
        }
        if self.lr_schedule[0].start_epoch != 0 {
            return Err("first lr_schedule stage must start at epoch 0".into());
        }
        self.gnn.validate()
    }

    /// Learning rate in effect for `epoch` (stages apply from their start epoch on).
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let mut lr = self.lr_schedule[0].lr;
        for stage in &self.lr_schedule {
            if epoch >= stage.start_epoch {
                lr = stage.lr;
            }
        }
        lr
    }
}

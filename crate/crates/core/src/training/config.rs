use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::AugmentConfig;
use super::loss::DEFAULT_AUX_WEIGHT;
use super::schedule::DEFAULT_POLY_POWER;
use crate::error::{Error, Result};

/// Optimisation and augmentation settings.
///
/// `Default` holds the full-scale settings (640 crops, lr 2.5e-4, …);
/// [`TrainConfig::toy`] is sized for the 64×64 synthetic fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub scale_range: (f64, f64),
    pub hflip_prob: f64,
    pub aux_weight: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many iterations (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            power: DEFAULT_POLY_POWER,
            max_iters: 80_000,
            batch_size: 2,
            crop: 640,
            scale_range: (0.5, 2.0),
            hflip_prob: 0.5,
            aux_weight: DEFAULT_AUX_WEIGHT,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            base_lr: 0.01,
            max_iters: 500,
            crop: 64,
            scale_range: (0.75, 1.5),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.power <= 0.0 || self.aux_weight < 0.0 {
            return bad("weight_decay and aux_weight must be non-negative, power positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.crop == 0 || !self.crop.is_multiple_of(32) {
            return bad("crop must be a positive multiple of 32");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("scale_range must satisfy 0 < low <= high");
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("hflip_prob must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn augment(&self, ignore_id: u8) -> AugmentConfig {
        AugmentConfig {
            hflip_prob: self.hflip_prob,
            scale_range: self.scale_range,
            crop: Some(self.crop),
            ignore_id,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

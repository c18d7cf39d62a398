//! Run configuration: every hyperparameter with documented defaults.
//! Loaded from TOML; unknown keys are rejected. Flag overrides are applied
//! by the CLI with precedence flags > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::TargetTransform;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every RNG stream in a run is derived from it.
    pub seed: u64,
    /// Train fraction of the labeled set.
    pub ratio: f64,
    /// Target-space transform for training (metrics are raw-space).
    pub transform: TargetTransform,
    /// Neighbors retrieved per query.
    pub k: usize,
    /// Attention/fusion model dimension.
    pub model_dim: usize,
    /// Hidden width of prediction heads.
    pub hidden: usize,
    /// Per-modality masking probability for completion training.
    pub mask_p: f64,
    /// Weight of the reconstruction loss.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early-stop patience in epochs.
    pub patience: usize,
    /// Minimum per-author train records required to fit an author model.
    pub min_author_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            ratio: 0.8,
            transform: TargetTransform::Log1p,
            k: 10,
            model_dim: 64,
            hidden: 64,
            mask_p: 0.3,
            lambda: 0.5,
            lr: 1e-3,
            epochs: 80,
            batch_size: 32,
            patience: 10,
            min_author_samples: 20,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::usage("ratio must be in (0,1)"));
        }
        if self.k == 0 || self.model_dim == 0 || self.hidden == 0 {
            return Err(Error::usage("k, model_dim and hidden must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_p) {
            return Err(Error::usage("mask_p must be in [0,1]"));
        }
        if self.lambda < 0.0 {
            return Err(Error::usage("lambda must be nonnegative"));
        }
        if self.lr <= 0.0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::usage("lr, epochs and batch_size must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::data(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let parsed: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let res: std::result::Result<RunConfig, _> = toml::from_str("bogus_key = 3");
        assert!(res.is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = RunConfig {
            ratio: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}

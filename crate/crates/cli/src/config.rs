use std::fs;
use std::path::Path;

use coughscreen_core::audio::ActivityConfig;
use coughscreen_core::augment::AugmentConfig;
use coughscreen_core::features::FeatureConfig;
use coughscreen_core::models::ModelConfig;
use coughscreen_core::training::TrainConfig;
use coughscreen_core::util::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub min_sensitivity: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_sensitivity: 0.8 }
    }
}

/// Every stage's settings in one JSON document. The top-level `seed`
/// drives all randomness: the augmentation and training seeds are derived
/// from it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub activity: ActivityConfig,
    pub features: FeatureConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Reads `path` (defaults when absent), applies a seed override, and
    /// validates everything before any work starts.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg: Self = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| CliError::Json {
                    path: p.display().to_string(),
                    source: e,
                })?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.augment.rng_seed = derive_seed(cfg.seed, "augment");
        cfg.train.seed = derive_seed(cfg.seed, "train");
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: String| CliError::Validation(e);
        self.activity.validate().map_err(|e| v(e.to_string()))?;
        self.augment.validate().map_err(|e| v(e.to_string()))?;
        self.model.validate().map_err(|e| v(e.to_string()))?;
        self.train.validate().map_err(|e| v(e.to_string()))?;
        if !(self.features.hop_ms > 0.0 && self.features.frame_ms >= self.features.hop_ms) {
            return Err(v("features need frame_ms >= hop_ms > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.min_sensitivity) {
            return Err(v("eval.min_sensitivity must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_fields_fail() {
        let c = PipelineConfig::default();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&j).unwrap(), c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.model, ModelConfig::default());
    }
}

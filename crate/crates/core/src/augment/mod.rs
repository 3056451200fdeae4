//! Data augmentation: spectrum interpolation between neighbouring
//! positives, SNR-controlled additive noise, and vocal tract length
//! perturbation.

mod noise;
mod spectrum;
mod vtlp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioError;
use crate::dsp::DspError;
use crate::features::FeatureError;

pub use noise::{add_noise, augment_noise, mix_components, synthetic_noise, NoiseKind, NoiseMixture};
pub use spectrum::{
    augment_positives, interpolated_stft, nearest_neighbors, spectrum_interpolate, spectrum_profile,
    SpectrumProfile, PROFILE_HOP, PROFILE_N_FFT,
};
pub use vtlp::{augment_vtlp, vtlp_features, vtlp_warp};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("need at least {needed} clips in the neighbour pool, found {found}")]
    PoolTooSmall { needed: usize, found: usize },
    #[error("noise clip is silent")]
    SilentNoise,
    #[error("signal clip is silent")]
    SilentSignal,
    #[error("warp factor {alpha} outside [{min}, {max}]")]
    BadAlpha { alpha: f64, min: f64, max: f64 },
    #[error("invalid augmentation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub k_neighbors: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub warp_min: f64,
    pub warp_max: f64,
    pub rng_seed: u64,
    /// Noisy copies replace their source clip in training instead of
    /// adding to it.
    pub noise_replaces_source: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            snr_db_min: 5.0,
            snr_db_max: 20.0,
            warp_min: 0.85,
            warp_max: 1.15,
            rng_seed: 0,
            noise_replaces_source: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.k_neighbors == 0 {
            return Err(AugmentError::BadConfig("k_neighbors must be >= 1".into()));
        }
        if !(self.snr_db_min <= self.snr_db_max) {
            return Err(AugmentError::BadConfig("snr_db_min > snr_db_max".into()));
        }
        if !(0.0 < self.warp_min && self.warp_min <= self.warp_max) {
            return Err(AugmentError::BadConfig("need 0 < warp_min <= warp_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    Spectrum,
    Noise,
    Vtlp,
}

/// Where an augmented clip came from. Serialized one record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub method: AugmentMethod,
    pub anchor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Provenance {
    /// Every clip id whose audio contributed to this one.
    pub fn sources(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.anchor_id.as_str()).chain(self.neighbor_id.as_deref())
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{detect_activity, ActivityConfig, AudioClip};
use crate::util::derive_seed;

use super::{AugmentConfig, AugmentError, AugmentMethod, Provenance};

/// The addends of a noisy mixture, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMixture {
    /// Noise looped or truncated to the clip length, times `gain`.
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
    /// `clip + scaled_noise` before any anti-clipping rescale.
    pub pre_rescale: Vec<f64>,
    /// Factor applied to the mixture so that its peak is at most 1.
    pub rescale: f64,
    pub output: AudioClip,
    /// Sample ranges over which power was measured.
    pub active: Vec<(usize, usize)>,
}

fn active_ranges(clip: &AudioClip) -> Vec<(usize, usize)> {
    match detect_activity(clip, &ActivityConfig::default()) {
        Ok(r) if !r.is_empty() => r,
        _ => vec![(0, clip.len())],
    }
}

fn mean_power(x: &[f64], ranges: &[(usize, usize)]) -> f64 {
    let mut e = 0.0;
    let mut n = 0usize;
    for &(s, t) in ranges {
        e += x[s..t].iter().map(|v| v * v).sum::<f64>();
        n += t - s;
    }
    e / n.max(1) as f64
}

pub fn mix_components(clip: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<NoiseMixture, AugmentError> {
    if noise.is_empty() || noise.is_silent() {
        return Err(AugmentError::SilentNoise);
    }
    if clip.is_empty() || clip.is_silent() {
        return Err(AugmentError::SilentSignal);
    }
    let looped: Vec<f64> = noise.samples.iter().cycle().take(clip.len()).cloned().collect();
    let active = active_ranges(clip);
    let ps = mean_power(&clip.samples, &active);
    let pn = mean_power(&looped, &active);
    if pn == 0.0 {
        // the noise is silent exactly where the signal is active
        return Err(AugmentError::SilentNoise);
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = looped.iter().map(|v| v * gain).collect();
    let pre_rescale: Vec<f64> = clip.samples.iter().zip(&scaled_noise).map(|(s, n)| s + n).collect();
    let peak = pre_rescale.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let output = clip.with_samples(pre_rescale.iter().map(|v| v * rescale).collect());
    Ok(NoiseMixture {
        scaled_noise,
        gain,
        pre_rescale,
        rescale,
        output,
        active,
    })
}

/// Adds `noise` to `clip` at `snr_db`, measured over the clip's active
/// region.
pub fn add_noise(clip: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip, AugmentError> {
    Ok(mix_components(clip, noise, snr_db)?.output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
        }
    }
}

/// Peak-normalized coloured Gaussian noise.
pub fn synthetic_noise(kind: NoiseKind, len: usize, sample_rate_hz: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut white = || -> f64 { rng.sample(StandardNormal) };
    let samples: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| white()).collect(),
        NoiseKind::Pink => {
            // Paul Kellet's economy pinking filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Brown => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    // leaky integrator keeps the walk bounded
                    acc = 0.995 * acc + 0.1 * white();
                    acc
                })
                .collect()
        }
    };
    let peak = samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    AudioClip::new(kind.name(), sample_rate_hz, samples.into_iter().map(|v| v * scale).collect())
}

/// One noisy copy per clip: a noise clip chosen uniformly and an SNR drawn
/// from `U[snr_db_min, snr_db_max]`, both from a per-clip seed.
pub fn augment_noise(
    clips: &[AudioClip],
    noises: &[AudioClip],
    cfg: &AugmentConfig,
) -> Result<Vec<(AudioClip, Provenance)>, AugmentError> {
    cfg.validate()?;
    if noises.is_empty() {
        return Err(AugmentError::PoolTooSmall { needed: 1, found: 0 });
    }
    clips
        .iter()
        .map(|clip| {
            let seed = derive_seed(cfg.rng_seed, &clip.id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = &noises[rng.random_range(0..noises.len())];
            let snr_db = if cfg.snr_db_max > cfg.snr_db_min {
                rng.random_range(cfg.snr_db_min..=cfg.snr_db_max)
            } else {
                cfg.snr_db_min
            };
            let mut out = add_noise(clip, noise, snr_db)?;
            out.id = format!("{}__nz", clip.id);
            let prov = Provenance {
                id: out.id.clone(),
                method: AugmentMethod::Noise,
                anchor_id: clip.id.clone(),
                neighbor_id: None,
                lambda: None,
                noise_id: Some(noise.id.clone()),
                snr_db: Some(snr_db),
                alpha: None,
                seed,
            };
            Ok((out, prov))
        })
        .collect()
}

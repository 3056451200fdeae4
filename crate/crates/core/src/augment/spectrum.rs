use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{peak_normalize, AudioClip};
use crate::dsp::{istft, stft, StftMatrix};
use crate::util::derive_seed;

use super::{AugmentConfig, AugmentError, AugmentMethod, Provenance};

pub const PROFILE_N_FFT: usize = 1024;
pub const PROFILE_HOP: usize = 512;

/// Time-averaged magnitude of a clip's 1024-point half spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    pub clip_id: String,
    pub mean_mag: Vec<f64>,
}

pub fn spectrum_profile(clip: &AudioClip) -> Result<SpectrumProfile, AugmentError> {
    let m = stft(&clip.samples, clip.sample_rate_hz, PROFILE_N_FFT, PROFILE_HOP)?;
    let mut mean_mag = vec![0.0; PROFILE_N_FFT / 2 + 1];
    for f in &m.frames {
        for (acc, c) in mean_mag.iter_mut().zip(&f.bins) {
            *acc += c.norm();
        }
    }
    let n = m.frames.len() as f64;
    mean_mag.iter_mut().for_each(|v| *v /= n);
    Ok(SpectrumProfile {
        clip_id: clip.id.clone(),
        mean_mag,
    })
}

fn distance(a: &SpectrumProfile, b: &SpectrumProfile) -> f64 {
    a.mean_mag
        .iter()
        .zip(&b.mean_mag)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The `k` pool ids closest to `target` by Euclidean distance between
/// profiles, nearest first; ties go to the lexicographically smaller id.
/// The target's own id is never returned.
pub fn nearest_neighbors(
    target: &SpectrumProfile,
    pool: &[SpectrumProfile],
    k: usize,
) -> Result<Vec<String>, AugmentError> {
    let mut scored: Vec<(f64, &str)> = pool
        .iter()
        .filter(|p| p.clip_id != target.clip_id)
        .map(|p| (distance(target, p), p.clip_id.as_str()))
        .collect();
    if k > scored.len() {
        return Err(AugmentError::PoolTooSmall {
            needed: k,
            found: scored.len(),
        });
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
}

/// `lambda * A + (1 - lambda) * B` per bin, with the neighbour's frames
/// truncated or cyclically repeated to the anchor's frame count.
pub fn interpolated_stft(
    anchor: &AudioClip,
    neighbor: &AudioClip,
    lambda: f64,
) -> Result<StftMatrix, AugmentError> {
    let mut a = stft(&anchor.samples, anchor.sample_rate_hz, PROFILE_N_FFT, PROFILE_HOP)?;
    let b = stft(&neighbor.samples, neighbor.sample_rate_hz, PROFILE_N_FFT, PROFILE_HOP)?;
    let nb = b.frames.len();
    for (t, frame) in a.frames.iter_mut().enumerate() {
        let other = &b.frames[t % nb];
        for (x, y) in frame.bins.iter_mut().zip(&other.bins) {
            *x = *x * lambda + *y * (1.0 - lambda);
        }
    }
    Ok(a)
}

/// Resynthesized, peak-normalized interpolation of two clips. The result
/// has the anchor's duration and id.
pub fn spectrum_interpolate(
    anchor: &AudioClip,
    neighbor: &AudioClip,
    lambda: f64,
) -> Result<AudioClip, AugmentError> {
    let m = interpolated_stft(anchor, neighbor, lambda)?;
    let samples = istft(&m)?;
    Ok(peak_normalize(&anchor.with_samples(samples)))
}

/// For every positive and each of its `k` nearest positives, one
/// interpolated clip with `lambda ~ U(0, 1)` drawn from a per-anchor seed.
pub fn augment_positives(
    positives: &[AudioClip],
    cfg: &AugmentConfig,
) -> Result<Vec<(AudioClip, Provenance)>, AugmentError> {
    cfg.validate()?;
    let k = cfg.k_neighbors;
    if positives.len() < k + 1 {
        return Err(AugmentError::PoolTooSmall {
            needed: k + 1,
            found: positives.len(),
        });
    }
    let profiles: Vec<SpectrumProfile> = positives.iter().map(spectrum_profile).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(positives.len() * k);
    for (anchor, profile) in positives.iter().zip(&profiles) {
        let seed = derive_seed(cfg.rng_seed, &anchor.id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (j, nid) in nearest_neighbors(profile, &profiles, k)?.into_iter().enumerate() {
            let neighbor = positives.iter().find(|c| c.id == nid).expect("neighbour comes from the pool");
            let lambda: f64 = rng.random();
            let mut clip = spectrum_interpolate(anchor, neighbor, lambda)?;
            clip.id = format!("{}__si{j}", anchor.id);
            let prov = Provenance {
                id: clip.id.clone(),
                method: AugmentMethod::Spectrum,
                anchor_id: anchor.id.clone(),
                neighbor_id: Some(nid),
                lambda: Some(lambda),
                noise_id: None,
                snr_db: None,
                alpha: None,
                seed,
            };
            out.push((clip, prov));
        }
    }
    Ok(out)
}

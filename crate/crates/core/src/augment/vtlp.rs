use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::dsp::{stft_with, Complex64, StftMatrix};
use crate::features::{assemble_with_stft, FeatureConfig, FeatureMatrix};
use crate::util::derive_seed;

use super::{AugmentConfig, AugmentError, AugmentMethod, Provenance};

/// Upper warp boundary as a fraction of Nyquist.
const F_HI: f64 = 0.8;

/// Source bin (fractional) read by output bin `f_out`. `s` is the Nyquist
/// bin index.
fn source_bin(f_out: f64, alpha: f64, s: f64) -> f64 {
    let b_out = F_HI * s * alpha.min(1.0);
    if f_out <= b_out {
        f_out / alpha
    } else {
        let b_src = b_out / alpha;
        s - (s - f_out) * (s - b_src) / (s - b_out)
    }
}

/// Piecewise-linear frequency warp of every frame: frequencies below the
/// boundary scale by `alpha`, the remainder maps linearly onto the range
/// up to Nyquist. Magnitudes are linearly interpolated between source bins
/// and phases come from the nearest source bin.
pub fn vtlp_warp(stft: &StftMatrix, alpha: f64, cfg: &AugmentConfig) -> Result<StftMatrix, AugmentError> {
    if !(alpha >= cfg.warp_min && alpha <= cfg.warp_max) {
        return Err(AugmentError::BadAlpha {
            alpha,
            min: cfg.warp_min,
            max: cfg.warp_max,
        });
    }
    let n_bins = stft.n_bins();
    let s = (n_bins - 1) as f64;
    let map: Vec<(usize, usize, f64, usize)> = (0..n_bins)
        .map(|k| {
            let src = source_bin(k as f64, alpha, s).clamp(0.0, s);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_bins - 1);
            (lo, hi, src - lo as f64, src.round() as usize)
        })
        .collect();
    let mut out = stft.clone();
    for (dst, frame) in out.frames.iter_mut().zip(&stft.frames) {
        let bins = &frame.bins;
        for (k, &(lo, hi, w, near)) in map.iter().enumerate() {
            let mag = if w == 0.0 {
                bins[lo].norm()
            } else {
                (1.0 - w) * bins[lo].norm() + w * bins[hi].norm()
            };
            dst.bins[k] = Complex64::from_polar(mag, bins[near].arg());
        }
    }
    Ok(out)
}

/// Features of `clip` computed from warped analysis spectra. Time-domain
/// feature columns are unaffected by the warp.
pub fn vtlp_features(
    clip: &AudioClip,
    alpha: f64,
    cfg: &AugmentConfig,
    fcfg: &FeatureConfig,
) -> Result<FeatureMatrix, AugmentError> {
    let rate = clip.sample_rate_hz;
    let m = stft_with(&clip.samples, rate, fcfg.n_fft(rate), fcfg.win_len(rate), fcfg.hop(rate))?;
    let warped = vtlp_warp(&m, alpha, cfg)?;
    Ok(assemble_with_stft(clip, warped, fcfg)?)
}

/// One warped feature matrix per clip, with `alpha ~ U[warp_min, warp_max]`
/// drawn from a per-clip seed.
pub fn augment_vtlp(
    clips: &[AudioClip],
    cfg: &AugmentConfig,
    fcfg: &FeatureConfig,
) -> Result<Vec<(FeatureMatrix, Provenance)>, AugmentError> {
    cfg.validate()?;
    clips
        .iter()
        .map(|clip| {
            let seed = derive_seed(cfg.rng_seed, &clip.id);
            let alpha = draw_alpha(seed, cfg);
            let mut m = vtlp_features(clip, alpha, cfg, fcfg)?;
            m.clip_id = format!("{}__vt", clip.id);
            let prov = Provenance {
                id: m.clip_id.clone(),
                method: AugmentMethod::Vtlp,
                anchor_id: clip.id.clone(),
                neighbor_id: None,
                lambda: None,
                noise_id: None,
                snr_db: None,
                alpha: Some(alpha),
                seed,
            };
            Ok((m, prov))
        })
        .collect()
}

fn draw_alpha(seed: u64, cfg: &AugmentConfig) -> f64 {
    if cfg.warp_max > cfg.warp_min {
        ChaCha8Rng::seed_from_u64(seed).random_range(cfg.warp_min..=cfg.warp_max)
    } else {
        cfg.warp_min
    }
}

use crate::audio::AudioClip;
use crate::dsp::{dct_ii, mel_filterbank};

use super::{deltas, FeatureConfig, FeatureError, FrameAnalysis};

const LOG_FLOOR: f64 = 1e-10;

/// 13 cepstra (C0..C12) of 26 log mel energies, followed by their delta
/// and double delta: 39 columns per frame.
pub fn mfcc39(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    mfcc_from_analysis(&FrameAnalysis::new(clip, cfg)?, cfg)
}

pub fn mfcc_from_analysis(a: &FrameAnalysis, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    let rate = a.sample_rate_hz;
    let fb = mel_filterbank(cfg.n_mels, 0.0, rate as f64 / 2.0, a.stft.n_fft, rate)?;
    let ceps: Vec<Vec<f64>> = a
        .stft
        .frames
        .iter()
        .map(|frame| {
            let energies: Vec<f64> = fb
                .apply(&frame.power())
                .into_iter()
                .map(|e| e.max(LOG_FLOOR).ln())
                .collect();
            dct_ii(&energies, cfg.n_ceps)
        })
        .collect();
    let d1 = deltas(&ceps);
    let d2 = deltas(&d1);
    Ok(ceps
        .into_iter()
        .zip(d1)
        .zip(d2)
        .map(|((mut c, a), b)| {
            c.extend(a);
            c.extend(b);
            c
        })
        .collect())
}

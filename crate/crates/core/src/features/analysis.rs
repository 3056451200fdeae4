use crate::audio::AudioClip;
use crate::dsp::{frame_count, stft_with, StftMatrix};

use super::{FeatureConfig, FeatureError};

/// Shared framing for every feature family, so all of them produce the
/// same number of rows.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub clip_id: String,
    pub sample_rate_hz: u32,
    pub win_len: usize,
    pub hop: usize,
    /// Raw (unwindowed) frame samples, zero-extended past the clip end.
    pub frames: Vec<Vec<f64>>,
    /// Hann-windowed half spectra of the same frames.
    pub stft: StftMatrix,
    pub(crate) samples: Vec<f64>,
}

impl FrameAnalysis {
    pub fn new(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Self, FeatureError> {
        if clip.is_empty() {
            return Err(FeatureError::EmptyClip);
        }
        let rate = clip.sample_rate_hz;
        let stft = stft_with(&clip.samples, rate, cfg.n_fft(rate), cfg.win_len(rate), cfg.hop(rate))?;
        Self::with_stft(clip, stft, cfg)
    }

    /// Uses `stft` in place of the clip's own spectra. Its framing must
    /// match the configured feature framing.
    pub fn with_stft(clip: &AudioClip, stft: StftMatrix, cfg: &FeatureConfig) -> Result<Self, FeatureError> {
        if clip.is_empty() {
            return Err(FeatureError::EmptyClip);
        }
        let rate = clip.sample_rate_hz;
        let (win_len, hop) = (cfg.win_len(rate), cfg.hop(rate));
        let n_frames = frame_count(clip.len(), win_len, hop);
        if stft.frames.len() != n_frames || stft.win_len != win_len || stft.hop != hop {
            return Err(FeatureError::Corrupt(format!(
                "spectral framing ({} frames, win {}, hop {}) does not match feature framing ({n_frames}, {win_len}, {hop})",
                stft.frames.len(),
                stft.win_len,
                stft.hop
            )));
        }
        let frames = (0..n_frames)
            .map(|t| {
                (0..win_len)
                    .map(|i| clip.samples.get(t * hop + i).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        Ok(Self {
            clip_id: clip.id.clone(),
            sample_rate_hz: rate,
            win_len,
            hop,
            frames,
            stft,
            samples: clip.samples.clone(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// `len` samples centred on frame `t`, zero outside the clip.
    pub fn centred_window(&self, t: usize, len: usize) -> Vec<f64> {
        let centre = (t * self.hop + self.win_len / 2) as isize;
        let start = centre - (len / 2) as isize;
        (0..len as isize)
            .map(|i| {
                let idx = start + i;
                if idx >= 0 {
                    self.samples.get(idx as usize).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

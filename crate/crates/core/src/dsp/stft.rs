use std::f64::consts::PI;

use super::fft::{fft_real, ifft, ComplexSpectrum};
use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

/// Framewise half spectra of a real signal.
///
/// Frame `t` covers samples `[t*hop, t*hop + win_len)`, windowed and
/// zero-padded to `n_fft`. The signal is zero-extended at the end so the
/// last frame reaches past the final sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StftMatrix {
    pub frames: Vec<ComplexSpectrum>,
    pub n_fft: usize,
    pub win_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate_hz: u32,
    /// Length of the analysed signal; used to size the resynthesis.
    pub signal_len: usize,
}

impl StftMatrix {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.n_fft as f64
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames [`stft_with`] produces for a signal of `len` samples.
pub fn frame_count(len: usize, win_len: usize, hop: usize) -> usize {
    if len <= win_len {
        1
    } else {
        (len - win_len).div_ceil(hop) + 1
    }
}

/// Hann-windowed STFT with frame length equal to `n_fft`.
pub fn stft(
    samples: &[f64],
    sample_rate_hz: u32,
    n_fft: usize,
    hop: usize,
) -> Result<StftMatrix, DspError> {
    stft_with(samples, sample_rate_hz, n_fft, n_fft, hop)
}

/// Hann-windowed STFT with an analysis window shorter than the transform.
pub fn stft_with(
    samples: &[f64],
    sample_rate_hz: u32,
    n_fft: usize,
    win_len: usize,
    hop: usize,
) -> Result<StftMatrix, DspError> {
    if win_len == 0 || win_len > n_fft || hop == 0 || hop > win_len {
        return Err(DspError::BadArgument(format!(
            "stft needs 0 < hop <= win_len <= n_fft (hop {hop}, win_len {win_len}, n_fft {n_fft})"
        )));
    }
    let window = hann(win_len);
    let n_frames = frame_count(samples.len(), win_len, hop);
    let mut buf = vec![0.0; win_len];
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = samples.get(start + i).copied().unwrap_or(0.0) * window[i];
        }
        frames.push(fft_real(&buf, n_fft)?);
    }
    Ok(StftMatrix {
        frames,
        n_fft,
        win_len,
        hop,
        window: WindowKind::Hann,
        sample_rate_hz,
        signal_len: samples.len(),
    })
}

/// Weighted overlap-add resynthesis with the analysis window reapplied and
/// the squared-window sum divided out. Requires `hop = n_fft/2` and a
/// full-length window.
pub fn istft(m: &StftMatrix) -> Result<Vec<f64>, DspError> {
    if m.hop * 2 != m.n_fft || m.win_len != m.n_fft {
        return Err(DspError::UnsupportedHop {
            hop: m.hop,
            n_fft: m.n_fft,
        });
    }
    let n = m.n_fft;
    let window = hann(n);
    let span = (m.frames.len().saturating_sub(1)) * m.hop + n;
    let mut acc = vec![0.0; span.max(m.signal_len)];
    let mut wsum = vec![0.0; acc.len()];
    for (t, frame) in m.frames.iter().enumerate() {
        let start = t * m.hop;
        let time = ifft(frame)?;
        for i in 0..n {
            acc[start + i] += time[i] * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    acc.truncate(m.signal_len);
    for (y, &w) in acc.iter_mut().zip(&wsum) {
        *y = if w > 1e-12 { *y / w } else { 0.0 };
    }
    Ok(acc)
}

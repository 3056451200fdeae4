use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::fft;
use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchConfig {
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Minimum normalized autocorrelation peak for a voiced decision.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            fmin_hz: 60.0,
            fmax_hz: 450.0,
            voicing_threshold: 0.3,
        }
    }
}

impl PitchConfig {
    /// Shortest frame that holds two periods of the lowest pitch.
    pub fn min_frame_len(&self, sample_rate_hz: u32) -> usize {
        (2.0 * sample_rate_hz as f64 / self.fmin_hz).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pitch {
    Voiced { f0_hz: f64, strength: f64 },
    Unvoiced,
}

impl Pitch {
    pub fn f0_or_zero(&self) -> f64 {
        match *self {
            Pitch::Voiced { f0_hz, .. } => f0_hz,
            Pitch::Unvoiced => 0.0,
        }
    }
}

/// Picks the pitch period from the normalized autocorrelation
/// `r(t) = sum x[n]x[n+t] / sqrt(E_head(t) E_tail(t))` over lags
/// `[sr/fmax, sr/fmin]`.
///
/// The shortest lag whose local peak reaches 90% of the global peak wins,
/// which avoids picking period multiples; the lag is refined by parabolic
/// interpolation.
pub fn autocorr_pitch(
    frame: &[f64],
    sample_rate_hz: u32,
    cfg: &PitchConfig,
) -> Result<Pitch, DspError> {
    let needed = cfg.min_frame_len(sample_rate_hz);
    if frame.len() < needed {
        return Err(DspError::FrameTooShort {
            len: frame.len(),
            needed,
        });
    }
    let sr = sample_rate_hz as f64;
    let n = frame.len();
    let min_lag = ((sr / cfg.fmax_hz).ceil() as usize).max(1);
    let max_lag = ((sr / cfg.fmin_hz).floor() as usize).min(n - 1);
    if min_lag > max_lag {
        return Err(DspError::BadArgument("empty lag range".into()));
    }

    let n_fft = (2 * n).next_power_of_two();
    let buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let spec = fft(&buf, n_fft)?;
    let pow: Vec<Complex64> = spec
        .bins
        .iter()
        .map(|c| Complex64::new(c.norm_sqr(), 0.0))
        .collect();
    // inverse via the forward transform of the conjugate (power is real and even)
    let ac_spec = fft(&pow, n_fft)?;
    let raw: Vec<f64> = ac_spec.bins.iter().map(|c| c.re / n_fft as f64).collect();

    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + frame[i] * frame[i];
    }
    if prefix[n] == 0.0 {
        return Ok(Pitch::Unvoiced);
    }
    let norm_at = |lag: usize| -> f64 {
        let head = prefix[n - lag];
        let tail = prefix[n] - prefix[lag];
        let d = (head * tail).sqrt();
        if d > 0.0 {
            raw[lag] / d
        } else {
            0.0
        }
    };
    let r: Vec<f64> = (0..=max_lag + 1).map(|l| if l < n { norm_at(l) } else { 0.0 }).collect();

    let (mut best, mut best_val) = (min_lag, f64::NEG_INFINITY);
    for lag in min_lag..=max_lag {
        if r[lag] > best_val {
            best_val = r[lag];
            best = lag;
        }
    }
    if best_val < cfg.voicing_threshold {
        return Ok(Pitch::Unvoiced);
    }
    let chosen = (min_lag..=max_lag)
        .find(|&l| {
            let left = if l > min_lag { r[l - 1] } else { f64::NEG_INFINITY };
            r[l] >= 0.9 * best_val && r[l] >= left && r[l] >= r[l + 1]
        })
        .unwrap_or(best);

    let mut lag = chosen as f64;
    if chosen > min_lag && chosen < max_lag {
        let (a, b, c) = (r[chosen - 1], r[chosen], r[chosen + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            lag += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(Pitch::Voiced {
        f0_hz: sr / lag,
        strength: r[chosen],
    })
}

use super::DspError;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centres equally spaced on the mel scale.
/// `weights` is `n_mels` rows of `n_fft/2 + 1` bin weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub centers_hz: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    /// Filter energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    fmin_hz: f64,
    fmax_hz: f64,
    n_fft: usize,
    sample_rate_hz: u32,
) -> Result<MelFilterbank, DspError> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if !(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= nyquist) {
        return Err(DspError::BadFrequencyRange {
            fmin: fmin_hz,
            fmax: fmax_hz,
            nyquist,
        });
    }
    if n_mels == 0 || n_fft < 2 {
        return Err(DspError::BadArgument("need n_mels >= 1 and n_fft >= 2".into()));
    }
    let (mlo, mhi) = (hz_to_mel(fmin_hz), hz_to_mel(fmax_hz));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = sample_rate_hz as f64 / n_fft as f64;
    let mut weights = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                if f <= lo || f >= hi {
                    0.0
                } else if f <= c {
                    (f - lo) / (c - lo)
                } else {
                    (hi - f) / (hi - c)
                }
            })
            .collect();
        // filters narrower than a bin still get the bin nearest their centre
        if row.iter().sum::<f64>() <= 0.0 {
            let k = ((c / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
        weights.push(row);
    }
    Ok(MelFilterbank {
        n_mels,
        fmin_hz,
        fmax_hz,
        centers_hz: edges[1..=n_mels].to_vec(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_1khz() {
        let expect = 2595.0 * (1.0f64 + 1000.0 / 700.0).log10();
        assert!((hz_to_mel(1000.0) - expect).abs() < 1e-12);
        assert!((hz_to_mel(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn single_filter_apex_at_mel_midpoint() {
        let fb = mel_filterbank(1, 300.0, 3000.0, 512, 16000).unwrap();
        let mid = mel_to_hz(0.5 * (hz_to_mel(300.0) + hz_to_mel(3000.0)));
        assert!((fb.centers_hz[0] - mid).abs() < 1e-9);
        let w = &fb.weights[0];
        let peak = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert!((peak as f64 * 31.25 - mid).abs() <= 31.25);
        for (k, &v) in w.iter().enumerate() {
            let f = k as f64 * 31.25;
            if f <= 300.0 || f >= 3000.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn centres_increase_and_weights_positive() {
        let fb = mel_filterbank(26, 0.0, 8000.0, 512, 16000).unwrap();
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
        for row in &fb.weights {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn bad_range() {
        assert!(matches!(
            mel_filterbank(26, 100.0, 9000.0, 512, 16000),
            Err(DspError::BadFrequencyRange { .. })
        ));
        assert!(mel_filterbank(26, 500.0, 500.0, 512, 16000).is_err());
    }
}

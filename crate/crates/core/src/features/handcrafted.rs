use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::audio::AudioClip;
use crate::dsp::{autocorr_pitch, lpc};

use super::{FeatureConfig, FeatureError, FrameAnalysis, HANDCRAFTED_DIM};

const ALPHA_CLAMP_DB: f64 = 60.0;
const ENERGY_FLOOR: f64 = 1e-12;
const ROLLOFF_FRACTION: f64 = 0.85;
const CONTRAST_QUANTILE: f64 = 0.02;
const CONTRAST_FMIN_HZ: f64 = 200.0;
const CONTRAST_OCTAVES: usize = 6;
const PRE_EMPHASIS: f64 = 0.97;
const FORMANT_MAX_BW_HZ: f64 = 400.0;
const FORMANT_MIN_HZ: f64 = 90.0;
const FORMANT_MAX_HZ: f64 = 7600.0;

/// The 24 handcrafted values per frame, in base-vector order starting at
/// the energy column.
pub fn handcrafted24(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    handcrafted_from_analysis(&FrameAnalysis::new(clip, cfg)?, cfg)
}

pub fn handcrafted_from_analysis(
    a: &FrameAnalysis,
    cfg: &FeatureConfig,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    let rate = a.sample_rate_hz;
    let pitch_len = cfg.pitch.min_frame_len(rate).max(a.win_len);
    let f0: Vec<f64> = (0..a.n_frames())
        .map(|t| {
            autocorr_pitch(&a.centred_window(t, pitch_len), rate, &cfg.pitch).map(|p| p.f0_or_zero())
        })
        .collect::<Result<_, _>>()?;
    let rap = relative_average_perturbation(&f0);
    let bin_hz = a.stft.bin_hz();
    let fitter = PolyFit::new(a.stft.n_bins());

    let rows = (0..a.n_frames())
        .map(|t| {
            let frame = &a.frames[t];
            let mag = a.stft.frames[t].magnitudes();
            let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
            let energy: f64 = frame.iter().map(|x| x * x).sum();
            let mut row = Vec::with_capacity(HANDCRAFTED_DIM);
            row.push(energy);
            row.push(f0[t]);
            row.extend(formants(frame, rate, cfg.lpc_order));
            row.push(spectral::alpha_ratio(&power, bin_hz, cfg.alpha_split_hz));
            row.push(rap[t]);
            row.push(spectral::flatness(&power));
            row.push(spectral::kurtosis(&mag));
            row.extend(spectral::contrast(&power, bin_hz));
            let (quad, lin) = fitter.fit(&mag);
            row.push(quad);
            row.push(lin);
            let centroid = spectral::centroid(&mag, bin_hz);
            row.push(centroid);
            row.push(spectral::rolloff(&power, bin_hz, ROLLOFF_FRACTION));
            row.push(spectral::bandwidth(&mag, bin_hz, centroid));
            row.push((energy / frame.len() as f64).sqrt());
            row.push(zero_crossing_rate(frame));
            debug_assert_eq!(row.len(), HANDCRAFTED_DIM);
            row
        })
        .collect();
    Ok(rows)
}

fn zero_crossing_rate(frame: &[f64]) -> f64 {
    let changes = frame
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    changes as f64 / frame.len() as f64
}

/// Three-point RAP over the pitch periods of voiced frames within +-2
/// frames; zero for unvoiced frames or fewer than three voiced neighbours.
fn relative_average_perturbation(f0: &[f64]) -> Vec<f64> {
    (0..f0.len())
        .map(|t| {
            if f0[t] <= 0.0 {
                return 0.0;
            }
            let lo = t.saturating_sub(2);
            let hi = (t + 2).min(f0.len() - 1);
            let periods: Vec<f64> = f0[lo..=hi].iter().filter(|&&f| f > 0.0).map(|f| 1.0 / f).collect();
            if periods.len() < 3 {
                return 0.0;
            }
            let mean = periods.iter().sum::<f64>() / periods.len() as f64;
            let pert: f64 = periods
                .windows(3)
                .map(|w| (w[1] - (w[0] + w[1] + w[2]) / 3.0).abs())
                .sum::<f64>()
                / (periods.len() - 2) as f64;
            pert / mean
        })
        .collect()
}

/// F1..F4 from the roots of an LPC polynomial of the pre-emphasized,
/// Hamming-windowed frame. Missing formants are 0.
fn formants(frame: &[f64], rate: u32, order: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    let n = frame.len();
    if n <= order + 1 {
        return out;
    }
    let shaped: Vec<f64> = (0..n)
        .map(|i| {
            let pre = frame[i] - if i > 0 { PRE_EMPHASIS * frame[i - 1] } else { 0.0 };
            let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            pre * w
        })
        .collect();
    let Ok(res) = lpc(&shaped, order) else {
        return out;
    };
    // companion matrix of z^p - a1 z^{p-1} - ... - ap
    let p = order;
    let mut comp = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        comp[(0, j)] = res.coefficients[j];
    }
    for i in 1..p {
        comp[(i, i - 1)] = 1.0;
    }
    let roots = comp.complex_eigenvalues();
    let sr = rate as f64;
    let mut found: Vec<f64> = roots
        .iter()
        .filter(|r| r.im > 0.0)
        .filter_map(|r| {
            let freq = r.im.atan2(r.re) * sr / (2.0 * std::f64::consts::PI);
            let bw = -r.norm().ln() * sr / std::f64::consts::PI;
            (bw < FORMANT_MAX_BW_HZ && freq > FORMANT_MIN_HZ && freq < FORMANT_MAX_HZ && freq.is_finite())
                .then_some(freq)
        })
        .collect();
    found.sort_by(f64::total_cmp);
    for (o, f) in out.iter_mut().zip(found) {
        *o = f;
    }
    out
}

/// Least-squares quadratic fit of magnitude against frequency normalized
/// to [0, 1], with the normal matrix precomputed.
struct PolyFit {
    x: Vec<f64>,
    inv: Option<Matrix3<f64>>,
}

impl PolyFit {
    fn new(n_bins: usize) -> Self {
        let denom = (n_bins.max(2) - 1) as f64;
        let x: Vec<f64> = (0..n_bins).map(|k| k as f64 / denom).collect();
        let mut m = Matrix3::zeros();
        for &xi in &x {
            let v = Vector3::new(xi * xi, xi, 1.0);
            m += v * v.transpose();
        }
        Self { x, inv: m.try_inverse() }
    }

    /// Returns the (quadratic, linear) coefficients.
    fn fit(&self, y: &[f64]) -> (f64, f64) {
        let Some(inv) = self.inv else {
            return (0.0, 0.0);
        };
        let mut rhs = Vector3::zeros();
        for (&xi, &yi) in self.x.iter().zip(y) {
            rhs += Vector3::new(xi * xi, xi, 1.0) * yi;
        }
        let c = inv * rhs;
        (c[0], c[1])
    }
}

/// Per-frame spectral descriptors. Every function returns 0 on an all-zero
/// spectrum.
pub mod spectral {
    use super::*;

    /// Magnitude-weighted mean frequency.
    pub fn centroid(mag: &[f64], bin_hz: f64) -> f64 {
        let total: f64 = mag.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        mag.iter().enumerate().map(|(k, m)| k as f64 * bin_hz * m).sum::<f64>() / total
    }

    /// Magnitude-weighted standard deviation of frequency around `centroid`.
    pub fn bandwidth(mag: &[f64], bin_hz: f64, centroid: f64) -> f64 {
        let total: f64 = mag.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let var = mag
            .iter()
            .enumerate()
            .map(|(k, m)| m * (k as f64 * bin_hz - centroid).powi(2))
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    /// Lowest frequency below which `fraction` of the power lies.
    pub fn rolloff(power: &[f64], bin_hz: f64, fraction: f64) -> f64 {
        let total: f64 = power.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let target = fraction * total;
        let mut acc = 0.0;
        for (k, p) in power.iter().enumerate() {
            acc += p;
            if acc >= target {
                return k as f64 * bin_hz;
            }
        }
        (power.len() - 1) as f64 * bin_hz
    }

    /// Geometric over arithmetic mean of the power spectrum, in [0, 1].
    pub fn flatness(power: &[f64]) -> f64 {
        let n = power.len() as f64;
        let am = power.iter().sum::<f64>() / n;
        if am <= 0.0 {
            return 0.0;
        }
        let gm = (power.iter().map(|p| p.ln()).sum::<f64>() / n).exp();
        (gm / am).clamp(0.0, 1.0)
    }

    /// Excess kurtosis of the magnitude values across bins.
    pub fn kurtosis(mag: &[f64]) -> f64 {
        let n = mag.len() as f64;
        let mean = mag.iter().sum::<f64>() / n;
        let m2 = mag.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
        if m2 <= 0.0 {
            return 0.0;
        }
        let m4 = mag.iter().map(|m| (m - mean).powi(4)).sum::<f64>() / n;
        m4 / (m2 * m2) - 3.0
    }

    /// dB ratio of power at or above `split_hz` to power below it,
    /// clamped to +-60 dB.
    pub fn alpha_ratio(power: &[f64], bin_hz: f64, split_hz: f64) -> f64 {
        let (mut below, mut above) = (0.0, 0.0);
        for (k, p) in power.iter().enumerate() {
            if (k as f64) * bin_hz < split_hz {
                below += p;
            } else {
                above += p;
            }
        }
        let db = 10.0 * (above.max(ENERGY_FLOOR) / below.max(ENERGY_FLOOR)).log10();
        db.clamp(-ALPHA_CLAMP_DB, ALPHA_CLAMP_DB)
    }

    /// Band edges: `[0, 200)`, five octaves up to 6400 Hz, then the
    /// residual band up to Nyquist.
    pub fn contrast_bands(n_bins: usize, bin_hz: f64) -> Vec<(usize, usize)> {
        let nyquist_bin = n_bins - 1;
        let mut edges_hz = vec![0.0];
        for i in 0..CONTRAST_OCTAVES {
            edges_hz.push(CONTRAST_FMIN_HZ * 2f64.powi(i as i32));
        }
        let mut bands = Vec::with_capacity(CONTRAST_OCTAVES + 1);
        for w in edges_hz.windows(2) {
            let lo = ((w[0] / bin_hz).round() as usize).min(nyquist_bin);
            let hi = ((w[1] / bin_hz).round() as usize).min(nyquist_bin).max(lo + 1);
            bands.push((lo, hi));
        }
        let last = bands.last().map(|b| b.1).unwrap_or(0).min(nyquist_bin);
        bands.push((last, nyquist_bin + 1));
        bands
    }

    /// Peak-minus-valley dB per band, where peak and valley are the mean
    /// power of the top and bottom 2% of the band's bins (at least one).
    pub fn contrast(power: &[f64], bin_hz: f64) -> Vec<f64> {
        contrast_bands(power.len(), bin_hz)
            .into_iter()
            .map(|(lo, hi)| {
                let mut band: Vec<f64> = power[lo..hi.min(power.len())].to_vec();
                if band.is_empty() {
                    return 0.0;
                }
                band.sort_by(f64::total_cmp);
                let q = ((CONTRAST_QUANTILE * band.len() as f64).round() as usize).max(1);
                let valley = band[..q].iter().sum::<f64>() / q as f64;
                let peak = band[band.len() - q..].iter().sum::<f64>() / q as f64;
                10.0 * peak.max(ENERGY_FLOOR).log10() - 10.0 * valley.max(ENERGY_FLOOR).log10()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft_real;
    use crate::features::{assemble_features, layout, BASE_DIM, MFCC_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize) -> AudioClip {
        AudioClip::new(
            "tone",
            16000,
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
        )
    }

    #[test]
    fn zero_frame_conventions() {
        let clip = AudioClip::new("z", 16000, vec![0.0; 4000]);
        let rows = handcrafted24(&clip, &FeatureConfig::default()).unwrap();
        for r in &rows {
            assert!(r.iter().all(|&v| v == 0.0), "{r:?}");
        }
    }

    #[test]
    fn tone_centroid_near_1khz() {
        let clip = tone(1000.0, 8000);
        let rows = handcrafted24(&clip, &FeatureConfig::default()).unwrap();
        let c = layout::CENTROID - MFCC_DIM;
        for r in &rows[1..rows.len() - 3] {
            assert!((r[c] - 1000.0).abs() < 31.25, "centroid {}", r[c]);
        }

        // oracle: Hann-windowed naive DFT of one frame
        let frame: Vec<f64> = (0..400)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / 400.0).cos();
                w * clip.samples[800 + i]
            })
            .collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..=256 {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in frame.iter().enumerate() {
                let ang = -2.0 * PI * (k * n) as f64 / 512.0;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            let m = (re * re + im * im).sqrt();
            num += m * k as f64 * 31.25;
            den += m;
        }
        let oracle = num / den;
        assert!((rows[5][c] - oracle).abs() < 1e-6);
        assert!((oracle - 1000.0).abs() < 31.25);
    }

    #[test]
    fn alpha_ratio_sign() {
        let cfg = FeatureConfig::default();
        let a = layout::ALPHA_RATIO - MFCC_DIM;
        let hi = handcrafted24(&tone(3000.0, 4000), &cfg).unwrap();
        let lo = handcrafted24(&tone(500.0, 4000), &cfg).unwrap();
        assert!(hi[5][a] > 0.0);
        assert!(lo[5][a] < 0.0);
    }

    #[test]
    fn flatness_bounds_and_rolloff_nyquist() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = fft_real(&x, 512).unwrap().power();
            let f = spectral::flatness(&p);
            assert!((0.0..=1.0).contains(&f));
            assert!(spectral::rolloff(&p, 31.25, 0.85) <= 8000.0);
        }
    }

    #[test]
    fn contrast_has_seven_bands_covering_spectrum() {
        let bands = spectral::contrast_bands(257, 31.25);
        assert_eq!(bands.len(), 7);
        assert_eq!(bands[0].0, 0);
        assert_eq!(bands[6].1, 257);
        for w in bands.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let n = 6000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                0.4 * (2.0 * PI * 180.0 * t).sin() + 0.2 * (2.0 * PI * 360.0 * t).sin() + 0.2 * rng.random_range(-1.0..1.0)
            })
            .collect();
        let c = 0.37;
        let cfg = FeatureConfig::default();
        let a = handcrafted24(&AudioClip::new("a", 16000, x.clone()), &cfg).unwrap();
        let b = handcrafted24(&AudioClip::new("b", 16000, x.iter().map(|v| v * c).collect()), &cfg).unwrap();
        let off = MFCC_DIM;
        let invariant: Vec<usize> = [
            layout::ZCR,
            layout::CENTROID,
            layout::ROLLOFF,
            layout::BANDWIDTH,
            layout::FLATNESS,
            layout::F0,
            layout::ALPHA_RATIO,
            layout::RAP,
        ]
        .into_iter()
        .chain(layout::CONTRAST)
        .chain(layout::FORMANTS)
        .map(|i| i - off)
        .collect();
        let mut voiced = 0;
        for (ra, rb) in a.iter().zip(&b) {
            if ra[layout::F0 - off] > 0.0 {
                voiced += 1;
            }
            for &j in &invariant {
                assert!((ra[j] - rb[j]).abs() < 1e-6 * (1.0 + ra[j].abs()), "col {}: {} vs {}", j + off, ra[j], rb[j]);
            }
            assert!((rb[layout::RMS - off] - c * ra[layout::RMS - off]).abs() < 1e-12);
            assert!((rb[layout::ENERGY - off] - c * c * ra[layout::ENERGY - off]).abs() < 1e-9);
        }
        assert!(voiced > 0, "test signal should be voiced somewhere");
    }

    #[test]
    fn features_are_finite_on_random_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cfg = FeatureConfig::default();
        for i in 0..40 {
            let n = rng.random_range(1..3000);
            let amp = 10f64.powf(rng.random_range(-8.0..0.0));
            let x: Vec<f64> = (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
            let m = assemble_features(&AudioClip::new(format!("r{i}"), 16000, x), &cfg).unwrap();
            assert!(m.data().iter().all(|v| v.is_finite()));
            for r in m.rows() {
                assert!(r[layout::F0] >= 0.0);
                assert!(r[BASE_DIM - 1] >= 0.0);
            }
        }
    }

    #[test]
    fn rap_needs_three_voiced() {
        assert_eq!(relative_average_perturbation(&[0.0, 100.0, 0.0, 0.0]), vec![0.0; 4]);
        let r = relative_average_perturbation(&[100.0, 110.0, 100.0]);
        assert!(r[1] > 0.0);
        assert_eq!(relative_average_perturbation(&[100.0, 0.0, 100.0])[1], 0.0);
    }
}

//! Per-frame acoustic features.
//!
//! Every frame gets a 63-value base vector (39 MFCC values followed by 24
//! handcrafted source/spectral values), which is then extended with its
//! first and second temporal regression deltas to 189 values.

mod analysis;
mod cache;
mod handcrafted;
mod mfcc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::dsp::{DspError, PitchConfig, StftMatrix};

pub use analysis::FrameAnalysis;
pub use cache::{read_feature_cache, write_feature_cache, CACHE_FORMAT_VERSION};
pub use handcrafted::{handcrafted24, handcrafted_from_analysis, spectral};
pub use mfcc::{mfcc39, mfcc_from_analysis};

pub const MFCC_DIM: usize = 39;
pub const HANDCRAFTED_DIM: usize = 24;
pub const BASE_DIM: usize = MFCC_DIM + HANDCRAFTED_DIM;
pub const FEATURE_DIM: usize = 3 * BASE_DIM;

/// Column positions inside the 63-value base vector.
pub mod layout {
    pub const MFCC: std::ops::Range<usize> = 0..39;
    pub const ENERGY: usize = 39;
    pub const F0: usize = 40;
    pub const FORMANTS: std::ops::Range<usize> = 41..45;
    pub const ALPHA_RATIO: usize = 45;
    pub const RAP: usize = 46;
    pub const FLATNESS: usize = 47;
    pub const KURTOSIS: usize = 48;
    pub const CONTRAST: std::ops::Range<usize> = 49..56;
    pub const POLY: std::ops::Range<usize> = 56..58;
    pub const CENTROID: usize = 58;
    pub const ROLLOFF: usize = 59;
    pub const BANDWIDTH: usize = 60;
    pub const RMS: usize = 61;
    pub const ZCR: usize = 62;
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip has no samples")]
    EmptyClip,
    #[error("global normalization requested without statistics")]
    MissingStats,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("expected width {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("feature cache version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt feature cache: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Framing and analysis parameters of the feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub lpc_order: usize,
    pub pitch: PitchConfig,
    /// Split frequency of the alpha ratio.
    pub alpha_split_hz: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 26,
            n_ceps: 13,
            lpc_order: 12,
            pitch: PitchConfig::default(),
            alpha_split_hz: 1400.0,
        }
    }
}

impl FeatureConfig {
    pub fn win_len(&self, rate: u32) -> usize {
        (self.frame_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop(&self, rate: u32) -> usize {
        (self.hop_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn n_fft(&self, rate: u32) -> usize {
        self.win_len(rate).next_power_of_two()
    }
}

/// `T x 189` feature rows of one clip, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub clip_id: String,
    n_frames: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(clip_id: impl Into<String>, data: Vec<f64>) -> Result<Self, FeatureError> {
        if data.is_empty() || data.len() % FEATURE_DIM != 0 {
            return Err(FeatureError::WidthMismatch {
                expected: FEATURE_DIM,
                found: data.len() % FEATURE_DIM,
            });
        }
        Ok(Self {
            clip_id: clip_id.into(),
            n_frames: data.len() / FEATURE_DIM,
            data,
        })
    }

    pub fn from_rows(clip_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let mut data = Vec::with_capacity(rows.len() * FEATURE_DIM);
        for r in rows {
            if r.len() != FEATURE_DIM {
                return Err(FeatureError::WidthMismatch {
                    expected: FEATURE_DIM,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(clip_id, data)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn width(&self) -> usize {
        FEATURE_DIM
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(FEATURE_DIM)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![NeumaierSum::default(); FEATURE_DIM];
        for row in self.rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        acc.iter().map(|a| a.value() / self.n_frames as f64).collect()
    }
}

/// Regression delta over a +-2 frame window with edge replication:
/// `d_t = sum_{n=1..2} n (x_{t+n} - x_{t-n}) / 10`.
pub fn deltas(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_len = rows.len();
    if t_len == 0 {
        return Vec::new();
    }
    let width = rows[0].len();
    let at = |t: isize| &rows[t.clamp(0, t_len as isize - 1) as usize];
    (0..t_len as isize)
        .map(|t| {
            (0..width)
                .map(|j| {
                    let mut s = 0.0;
                    for n in 1..=2isize {
                        s += n as f64 * (at(t + n)[j] - at(t - n)[j]);
                    }
                    s / 10.0
                })
                .collect()
        })
        .collect()
}

/// Full 189-wide features of a clip.
pub fn assemble_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let analysis = FrameAnalysis::new(clip, cfg)?;
    assemble_from_analysis(&analysis, cfg)
}

/// Builds features from a prepared frame analysis; used directly when the
/// spectra have been modified (for example by frequency warping).
pub fn assemble_from_analysis(
    analysis: &FrameAnalysis,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    let mfcc = mfcc_from_analysis(analysis, cfg)?;
    let hand = handcrafted_from_analysis(analysis, cfg)?;
    debug_assert_eq!(mfcc.len(), hand.len());
    let base: Vec<Vec<f64>> = mfcc
        .into_iter()
        .zip(hand)
        .map(|(mut m, h)| {
            m.extend(h);
            m
        })
        .collect();
    let d1 = deltas(&base);
    let d2 = deltas(&d1);
    let mut data = Vec::with_capacity(base.len() * FEATURE_DIM);
    for t in 0..base.len() {
        data.extend_from_slice(&base[t]);
        data.extend_from_slice(&d1[t]);
        data.extend_from_slice(&d2[t]);
    }
    FeatureMatrix::new(analysis.clip_id.clone(), data)
}

/// Features computed from a caller-supplied feature-framing STFT.
pub fn assemble_with_stft(
    clip: &AudioClip,
    stft: StftMatrix,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    let analysis = FrameAnalysis::with_stft(clip, stft, cfg)?;
    assemble_from_analysis(&analysis, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    UttWise,
    Global,
}

/// Frame-weighted mean of a set of feature matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub n_frames_seen: usize,
}

/// Mean subtraction only; no variance scaling.
pub fn normalize(
    m: &FeatureMatrix,
    mode: NormMode,
    stats: Option<&NormalizationStats>,
) -> Result<FeatureMatrix, FeatureError> {
    let mean = match mode {
        NormMode::UttWise => m.column_means(),
        NormMode::Global => {
            let s = stats.ok_or(FeatureError::MissingStats)?;
            if s.mean.len() != FEATURE_DIM {
                return Err(FeatureError::WidthMismatch {
                    expected: FEATURE_DIM,
                    found: s.mean.len(),
                });
            }
            s.mean.clone()
        }
    };
    let data = m
        .data
        .chunks_exact(FEATURE_DIM)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu))
        .collect();
    FeatureMatrix::new(m.clip_id.clone(), data)
}

pub fn compute_global_mean<'a, I>(dataset: I) -> Result<NormalizationStats, FeatureError>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let mut acc = vec![NeumaierSum::default(); FEATURE_DIM];
    let mut n = 0usize;
    for m in dataset {
        for row in m.rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        n += m.n_frames();
    }
    if n == 0 {
        return Err(FeatureError::EmptyDataset);
    }
    Ok(NormalizationStats {
        mean: acc.iter().map(|a| a.value() / n as f64).collect(),
        n_frames_seen: n,
    })
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, id: &str, frames: usize) -> FeatureMatrix {
        let data = (0..frames * FEATURE_DIM).map(|_| rng.random_range(-10.0..10.0)).collect();
        FeatureMatrix::new(id, data).unwrap()
    }

    fn noise_clip(seed: u64, n: usize) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new("noise", 16000, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn widths() {
        let clip = noise_clip(1, 8000);
        let cfg = FeatureConfig::default();
        let m = assemble_features(&clip, &cfg).unwrap();
        assert_eq!(m.width(), 189);
        assert!(m.rows().all(|r| r.len() == 189));
        assert_eq!(mfcc39(&clip, &cfg).unwrap()[0].len(), 39);
        assert_eq!(handcrafted24(&clip, &cfg).unwrap()[0].len(), 24);
    }

    #[test]
    fn delta_block_matches_direct_formula() {
        let clip = noise_clip(2, 6000);
        let cfg = FeatureConfig::default();
        let m = assemble_features(&clip, &cfg).unwrap();
        let t_len = m.n_frames() as isize;
        let base = |t: isize, j: usize| m.row(t.clamp(0, t_len - 1) as usize)[j];
        for t in 0..t_len {
            for j in 0..BASE_DIM {
                let expect = (base(t + 1, j) - base(t - 1, j) + 2.0 * (base(t + 2, j) - base(t - 2, j))) / 10.0;
                assert!((m.row(t as usize)[BASE_DIM + j] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn constant_rows_have_zero_deltas() {
        let rows = vec![vec![1.5, -2.0, 3.0]; 7];
        let d = deltas(&rows);
        assert!(d.iter().flatten().all(|&v| v == 0.0));
        assert!(deltas(&d).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn utt_wise_zero_mean_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, "a", 40);
        let n = normalize(&m, NormMode::UttWise, None).unwrap();
        assert!(n.column_means().iter().all(|v| v.abs() < 1e-10));
        let nn = normalize(&n, NormMode::UttWise, None).unwrap();
        for (a, b) in n.data().iter().zip(nn.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn global_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng, "a", 10);
        let zero = NormalizationStats { mean: vec![0.0; FEATURE_DIM], n_frames_seen: 1 };
        assert_eq!(normalize(&m, NormMode::Global, Some(&zero)).unwrap(), m);
        assert!(matches!(normalize(&m, NormMode::Global, None), Err(FeatureError::MissingStats)));

        let set: Vec<FeatureMatrix> = (0..5).map(|i| random_matrix(&mut rng, "x", 3 + i)).collect();
        let stats = compute_global_mean(&set).unwrap();
        let normed: Vec<FeatureMatrix> = set
            .iter()
            .map(|m| normalize(m, NormMode::Global, Some(&stats)).unwrap())
            .collect();
        let again = compute_global_mean(&normed).unwrap();
        assert!(again.mean.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn global_mean_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let one = random_matrix(&mut rng, "a", 1);
        let three = random_matrix(&mut rng, "b", 3);
        let s = compute_global_mean([&one]).unwrap();
        assert_eq!(s.mean, one.column_means());
        let s = compute_global_mean([&one, &three]).unwrap();
        assert_eq!(s.n_frames_seen, 4);
        let m3 = three.column_means();
        for j in 0..FEATURE_DIM {
            let expect = (one.row(0)[j] + 3.0 * m3[j]) / 4.0;
            assert!((s.mean[j] - expect).abs() < 1e-12);
        }
        assert!(matches!(
            compute_global_mean(std::iter::empty::<&FeatureMatrix>()),
            Err(FeatureError::EmptyDataset)
        ));
    }

    #[test]
    fn global_mean_matches_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set: Vec<FeatureMatrix> = (0..10)
            .map(|i| {
                let frames = rng.random_range(1..30);
                random_matrix(&mut rng, &format!("m{i}"), frames)
            })
            .collect();
        let stats = compute_global_mean(&set).unwrap();
        let all: Vec<&[f64]> = set.iter().flat_map(|m| m.rows()).collect();
        for j in 0..FEATURE_DIM {
            let naive = all.iter().map(|r| r[j]).sum::<f64>() / all.len() as f64;
            assert!((stats.mean[j] - naive).abs() < 1e-12);
        }
    }
}

//! Synthetic two-class cough-like corpus. Class 0 puts its energy in a
//! 1-4 kHz band with a mild tilt, class 1 in 0.2-1.5 kHz with a steep
//! tilt. Both use burst-decay envelopes.

use std::fs;
use std::path::Path;

use coughscreen_core::audio::{write_wav_pcm16, AudioClip, PIPELINE_RATE_HZ};
use coughscreen_core::dsp::{fft_real, ifft};
use coughscreen_core::util::{derive_seed, write_atomic};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::CliError;
use crate::manifest::{Fold, Manifest, ManifestRow, MAX_FOLD};

pub const MIN_PER_CLASS: usize = 5;

#[derive(Debug, Clone, Copy)]
struct Band {
    lo_hz: f64,
    hi_hz: f64,
    /// Power-law exponent of the magnitude above `lo_hz`.
    tilt: f64,
}

const NEGATIVE: Band = Band {
    lo_hz: 1000.0,
    hi_hz: 4000.0,
    tilt: 0.5,
};
const POSITIVE: Band = Band {
    lo_hz: 200.0,
    hi_hz: 1500.0,
    tilt: 2.0,
};

fn band_noise(rng: &mut ChaCha8Rng, len: usize, band: Band) -> Result<Vec<f64>, CliError> {
    let n_fft = len.next_power_of_two();
    let x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = fft_real(&x, n_fft).map_err(|e| CliError::Validation(e.to_string()))?;
    let df = PIPELINE_RATE_HZ as f64 / n_fft as f64;
    for (k, b) in spec.bins.iter_mut().enumerate() {
        let f = k as f64 * df;
        let g = if (band.lo_hz..=band.hi_hz).contains(&f) {
            (f / band.lo_hz).powf(-band.tilt)
        } else {
            0.0
        };
        *b *= g;
    }
    let mut y = ifft(&spec).map_err(|e| CliError::Validation(e.to_string()))?;
    y.truncate(len);
    Ok(y)
}

/// One to three bursts with a 10 ms attack and exponential decay.
fn envelope(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let rate = PIPELINE_RATE_HZ as f64;
    let mut env = vec![0.0; len];
    let n_bursts = rng.random_range(1..=3);
    for _ in 0..n_bursts {
        let onset = rng.random_range(0..len / 2);
        let amp: f64 = rng.random_range(0.5..1.0);
        let tau = rng.random_range(0.05..0.15) * rate;
        let attack = 0.01 * rate;
        for (i, e) in env.iter_mut().enumerate().skip(onset) {
            let t = (i - onset) as f64;
            let g = if t < attack { t / attack } else { (-(t - attack) / tau).exp() };
            *e += amp * g;
        }
    }
    env
}

fn make_clip(id: &str, label: u8, seed: u64) -> Result<AudioClip, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
    let dur: f64 = rng.random_range(0.5..2.0);
    let len = (dur * PIPELINE_RATE_HZ as f64).round() as usize;
    let band = if label == 1 { POSITIVE } else { NEGATIVE };
    let noise = band_noise(&mut rng, len, band)?;
    let env = envelope(&mut rng, len);
    let mut x: Vec<f64> = noise.iter().zip(&env).map(|(n, e)| n * e).collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    Ok(AudioClip::new(id, PIPELINE_RATE_HZ, x))
}

/// Fold tags 1..=5 assigned round-robin over a seeded shuffle.
fn stratified_folds(n: usize, rng: &mut ChaCha8Rng) -> Vec<Fold> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut folds = vec![Fold::K(1); n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = Fold::K(pos % MAX_FOLD + 1);
    }
    folds
}

/// Writes `audio/*.wav` and `manifest.csv` under `out`.
pub fn synthesize(out: &Path, n_neg: usize, n_pos: usize, seed: u64) -> Result<Manifest, CliError> {
    if n_neg < MIN_PER_CLASS || n_pos < MIN_PER_CLASS {
        return Err(CliError::Validation(format!(
            "synth needs at least {MIN_PER_CLASS} clips per class"
        )));
    }
    let audio = out.join("audio");
    fs::create_dir_all(&audio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synth/folds"));
    let neg_folds = stratified_folds(n_neg, &mut rng);
    let pos_folds = stratified_folds(n_pos, &mut rng);
    let rows: Vec<ManifestRow> = (0..n_neg)
        .map(|i| (format!("neg{i:04}"), 0, neg_folds[i]))
        .chain((0..n_pos).map(|i| (format!("pos{i:04}"), 1, pos_folds[i])))
        .map(|(clip_id, label, fold)| ManifestRow {
            path: format!("audio/{clip_id}.wav"),
            clip_id,
            label,
            fold,
        })
        .collect();
    rows.par_iter().try_for_each(|r| -> Result<(), CliError> {
        let clip = make_clip(&r.clip_id, r.label, seed)?;
        write_wav_pcm16(&audio.join(format!("{}.wav", r.clip_id)), &clip)?;
        Ok(())
    })?;
    let manifest = Manifest {
        rows,
        base_dir: out.to_path_buf(),
    };
    write_atomic(&out.join("manifest.csv"), manifest.to_csv().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = stratified_folds(12, &mut rng);
        for k in 1..=5 {
            let n = f.iter().filter(|&&x| x == Fold::K(k)).count();
            assert!(n == 2 || n == 3, "fold {k} holds {n}");
        }
    }

    #[test]
    fn clip_is_deterministic_and_bounded() {
        let a = make_clip("pos0001", 1, 7).unwrap();
        let b = make_clip("pos0001", 1, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|v| v.abs() <= 0.9 + 1e-12));
        let d = a.duration_s();
        assert!((0.5..=2.0).contains(&d));
    }
}

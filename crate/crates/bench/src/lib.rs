//! Seeded fixtures shared by the benchmarks.

use coughscreen_core::audio::AudioClip;
use coughscreen_core::eval::ScoredUtterance;
use coughscreen_core::features::{FeatureMatrix, FEATURE_DIM};
use coughscreen_core::training::LabeledClip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn noise_clip(seed: u64, len: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new(format!("n{seed}"), 16_000, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn feature_matrix(id: &str, frames: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMatrix::new(id, data).expect("non-empty rows")
}

/// Clips whose first feature column is shifted by class.
pub fn labeled_clips(n: usize, frames: usize, seed: u64) -> Vec<LabeledClip> {
    (0..n)
        .map(|i| {
            let label = (i % 4 == 0) as u8;
            let mut m = feature_matrix(&format!("c{i}"), frames, seed + i as u64);
            let shift = if label == 1 { 1.0 } else { -1.0 };
            let data: Vec<f64> = m
                .data()
                .iter()
                .enumerate()
                .map(|(j, v)| if j % FEATURE_DIM == 0 { v + shift } else { *v })
                .collect();
            m = FeatureMatrix::new(m.clip_id.clone(), data).expect("same shape");
            LabeledClip { features: m, label }
        })
        .collect()
}

pub fn scores(n: usize, seed: u64) -> Vec<ScoredUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 17 == 0) as u8;
            ScoredUtterance::new(format!("s{i}"), label, rng.random()).expect("score in range")
        })
        .collect()
}

//! Numeric signal-processing kernels shared by the feature and
//! augmentation stages.

mod dct;
mod fft;
mod lpc;
mod mel;
mod pitch;
mod stft;

pub use dct::{dct_ii, idct_ii};
pub use fft::{fft, fft_real, ifft, ComplexSpectrum};
pub use lpc::{autocorrelation, lpc, LpcResult};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use pitch::{autocorr_pitch, Pitch, PitchConfig};
pub use stft::{frame_count, hann, istft, stft, stft_with, StftMatrix, WindowKind};

pub use rustfft::num_complex::Complex64;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("transform size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("inverse STFT requires hop = n_fft/2 (got hop {hop}, n_fft {n_fft})")]
    UnsupportedHop { hop: usize, n_fft: usize },
    #[error("bad frequency range {fmin}..{fmax} Hz (Nyquist {nyquist})")]
    BadFrequencyRange { fmin: f64, fmax: f64, nyquist: f64 },
    #[error("frame is degenerate for linear prediction")]
    DegenerateFrame,
    #[error("frame of {len} samples is shorter than the required {needed}")]
    FrameTooShort { len: usize, needed: usize },
    #[error("bad argument: {0}")]
    BadArgument(String),
}

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::DspError;

/// A DFT result. `bins` holds either the full spectrum (`n_fft` bins) or
/// the non-redundant half of a real signal's spectrum (`n_fft/2 + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub bins: Vec<Complex64>,
    pub n_fft: usize,
}

impl ComplexSpectrum {
    pub fn is_half(&self) -> bool {
        self.bins.len() == self.n_fft / 2 + 1
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm_sqr()).collect()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_pow2(n: usize) -> Result<(), DspError> {
    if n == 0 || !n.is_power_of_two() {
        Err(DspError::NotPowerOfTwo(n))
    } else {
        Ok(())
    }
}

fn run(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Unnormalized forward DFT, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
/// The input is zero-padded or truncated to `n_fft`.
pub fn fft(x: &[Complex64], n_fft: usize) -> Result<ComplexSpectrum, DspError> {
    check_pow2(n_fft)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, v) in buf.iter_mut().zip(x) {
        *b = *v;
    }
    run(&mut buf, false);
    Ok(ComplexSpectrum { bins: buf, n_fft })
}

/// Forward DFT of a real signal, returning the `n_fft/2 + 1` half spectrum.
pub fn fft_real(x: &[f64], n_fft: usize) -> Result<ComplexSpectrum, DspError> {
    check_pow2(n_fft)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    run(&mut buf, false);
    buf.truncate(n_fft / 2 + 1);
    Ok(ComplexSpectrum { bins: buf, n_fft })
}

/// Inverse DFT scaled by `1/N`. A half spectrum is expanded by Hermitian
/// symmetry and only the real part is returned in that case; for a full
/// spectrum the real part is returned as well.
pub fn ifft(spec: &ComplexSpectrum) -> Result<Vec<f64>, DspError> {
    let n = spec.n_fft;
    check_pow2(n)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    if spec.bins.len() == n {
        buf.copy_from_slice(&spec.bins);
    } else if spec.is_half() {
        buf[..=n / 2].copy_from_slice(&spec.bins);
        for k in n / 2 + 1..n {
            buf[k] = spec.bins[n - k].conj();
        }
    } else {
        return Err(DspError::BadArgument(format!(
            "spectrum has {} bins for n_fft {n}",
            spec.bins.len()
        )));
    }
    run(&mut buf, true);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, v)| {
                    let ang = -2.0 * PI * (k * j % n) as f64 / n as f64;
                    acc + v * Complex64::new(ang.cos(), ang.sin())
                })
            })
            .collect()
    }

    #[test]
    fn impulse_is_flat() {
        let x = [1.0, 0.0, 0.0, 0.0];
        let s = fft_real(&x, 4).unwrap();
        assert!(s.bins.iter().all(|c| *c == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn single_bin_cosine() {
        let x: Vec<Complex64> = (0..8)
            .map(|n| Complex64::new((2.0 * PI * 2.0 * n as f64 / 8.0).cos(), 0.0))
            .collect();
        let s = fft(&x, 8).unwrap();
        for (k, b) in s.bins.iter().enumerate() {
            if k == 2 || k == 6 {
                assert!((b - Complex64::new(4.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(b.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_dft_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..100 {
            let n = 1 << (1 + trial % 6);
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let fast = fft(&x, n).unwrap();
            let slow = naive_dft(&x);
            for (a, b) in fast.bins.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
            let et: f64 = x.iter().map(|c| c.norm_sqr()).sum();
            let ef: f64 = fast.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
            assert!(((et - ef) / et).abs() < 1e-9);
        }
    }

    #[test]
    fn not_power_of_two() {
        assert_eq!(fft_real(&[1.0; 6], 6).unwrap_err(), DspError::NotPowerOfTwo(6));
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = ifft(&fft_real(&x, 64).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

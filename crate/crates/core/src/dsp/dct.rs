use std::f64::consts::PI;

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct_ii(v: &[f64], n_out: usize) -> Vec<f64> {
    let n = v.len();
    assert!(n_out <= n, "n_out {n_out} exceeds input length {n}");
    let nf = n as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let s: f64 = v
                .iter()
                .enumerate()
                .map(|(i, x)| x * (PI * (i as f64 + 0.5) * k as f64 / nf).cos())
                .sum();
            scale * s
        })
        .collect()
}

/// Inverse of the full-length orthonormal DCT-II (an orthonormal DCT-III).
pub fn idct_ii(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let nf = n as f64;
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, x)| {
                    let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    scale * x * (PI * (i as f64 + 0.5) * k as f64 / nf).cos()
                })
                .sum()
        })
        .collect()
}

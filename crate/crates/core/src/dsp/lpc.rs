use super::DspError;

/// Linear predictor `x[n] ~ sum_k coefficients[k-1] * x[n-k]` and its
/// residual energy.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcResult {
    pub coefficients: Vec<f64>,
    pub gain: f64,
}

/// Biased autocorrelation for lags `0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            if lag >= x.len() {
                0.0
            } else {
                x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// Levinson-Durbin recursion on the frame's autocorrelation.
pub fn lpc(frame: &[f64], order: usize) -> Result<LpcResult, DspError> {
    if order == 0 || order >= frame.len() {
        return Err(DspError::BadArgument(format!(
            "order {order} must be in 1..{}",
            frame.len()
        )));
    }
    let r = autocorrelation(frame, order);
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(DspError::DegenerateFrame);
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = r[0];
    for i in 1..=order {
        if !(err > 0.0) {
            return Err(DspError::DegenerateFrame);
        }
        let mut acc = r[i];
        for j in 1..i {
            acc -= prev[j - 1] * r[i - j];
        }
        let k = acc / err;
        a[i - 1] = k;
        for j in 1..i {
            a[j - 1] = prev[j - 1] - k * prev[i - j - 1];
        }
        err *= 1.0 - k * k;
        err = err.max(0.0);
        prev[..i].copy_from_slice(&a[..i]);
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DspError::DegenerateFrame);
    }
    Ok(LpcResult {
        coefficients: a,
        gain: err,
    })
}

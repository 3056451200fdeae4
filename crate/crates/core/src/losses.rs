//! Training objectives: class-weighted cross-entropy, the pairwise AUROC
//! surrogate, and the joint VAE loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus, AutodiffError, Tape, Tensor, Var};
use crate::models::JvaeOutputs;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("invalid loss weight: {0}")]
    BadWeight(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

fn check_labels(labels: &[u8]) -> Result<(), LossError> {
    match labels.iter().find(|&&y| y > 1) {
        Some(&y) => Err(LossError::BadLabel(y)),
        None => Ok(()),
    }
}

fn check_wt_pos(wt_pos: f64) -> Result<(), LossError> {
    if wt_pos.is_finite() && wt_pos > 0.0 {
        Ok(())
    } else {
        Err(LossError::BadWeight(format!("wt_pos {wt_pos}")))
    }
}

/// Per-frame weights: `wt_pos` on positives, 1 on negatives.
pub fn class_weights(labels: &[u8], wt_pos: f64) -> Vec<f64> {
    labels.iter().map(|&y| if y == 1 { wt_pos } else { 1.0 }).collect()
}

/// Weighted mean cross-entropy of two-class `logits [N, 2]`.
pub fn weighted_ce(tape: &mut Tape, logits: Var, labels: &[u8], wt_pos: f64) -> Result<Var, LossError> {
    check_labels(labels)?;
    check_wt_pos(wt_pos)?;
    let idx: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    Ok(tape.softmax_ce(logits, &idx, &class_weights(labels, wt_pos))?)
}

/// `BCE(sigmoid(v_p - v_n), 1) + BCE(sigmoid(v_n - v_p), 0)` on scalar
/// utterance outputs. Both terms equal `softplus(v_n - v_p)`; they are
/// kept separate as written.
pub fn auroc_loss(tape: &mut Tape, v_p: Var, v_n: Var) -> Result<Var, LossError> {
    let pn = tape.sub(v_p, v_n)?;
    let neg_pn = tape.scale(pn, -1.0);
    let first = tape.softplus(neg_pn);
    let np = tape.sub(v_n, v_p)?;
    let second = tape.softplus(np);
    Ok(tape.add(first, second)?)
}

/// Plain-number form of [`auroc_loss`].
pub fn auroc_loss_value(v_p: f64, v_n: f64) -> f64 {
    softplus(-(v_p - v_n)) + softplus(v_n - v_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JvaeLossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for JvaeLossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 0.1,
        }
    }
}

impl JvaeLossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().all(|l| l.is_finite() && *l >= 0.0) {
            Ok(())
        } else {
            Err(LossError::BadWeight(format!("{self:?}")))
        }
    }
}

/// The three JVAE terms (unweighted) and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct JvaeLossTerms {
    pub total: Var,
    pub mse: Var,
    pub bce: Var,
    pub kld: Var,
}

/// `lambda1 * MSE(x, x_hat) + lambda2 * BCE(y_prob, y) + lambda3 * KLD`.
///
/// MSE averages over frames and feature dims. BCE is the weighted mean
/// with `wt_pos` on positive frames. KLD is the closed form against a
/// standard normal prior, summed over latent dims and averaged over frames.
pub fn jvae_loss(
    tape: &mut Tape,
    x: Var,
    out: &JvaeOutputs,
    labels: &[u8],
    wt_pos: f64,
    w: &JvaeLossWeights,
) -> Result<JvaeLossTerms, LossError> {
    check_labels(labels)?;
    check_wt_pos(wt_pos)?;
    w.validate()?;

    let diff = tape.sub(x, out.x_hat)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.mean(sq);

    let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let bce = tape.bce_with_logits(out.y_logit, &targets, &class_weights(labels, wt_pos))?;

    let shape = tape.shape(out.mu).to_vec();
    let n = shape[0] as f64;
    let mu2 = tape.mul(out.mu, out.mu)?;
    let var = tape.exp(out.log_var);
    let t = tape.sub(out.log_var, mu2)?;
    let t = tape.sub(t, var)?;
    let ones = tape.constant(Tensor::filled(&shape, 1.0));
    let t = tape.add(t, ones)?;
    let s = tape.sum(t);
    let kld = tape.scale(s, -0.5 / n);

    let a = tape.scale(mse, w.lambda1);
    let b = tape.scale(bce, w.lambda2);
    let c = tape.scale(kld, w.lambda3);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(JvaeLossTerms { total, mse, bce, kld })
}

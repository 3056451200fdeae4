//! Utterance scoring, ROC construction, AUC, specificity at a sensitivity
//! floor, and score ensembling.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::autodiff::{sigmoid, Tape, Tensor};
use crate::features::{normalize, FeatureError, FeatureMatrix, NormMode, NormalizationStats};
use crate::models::{Arch, Mode, Model, ModelError};
use crate::training::model_inputs;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least one positive and one negative (got {n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("score sets disagree on clip ids: {0}")]
    IdMismatch(String),
    #[error("score {score} for {clip_id} is outside [0, 1]")]
    BadScore { clip_id: String, score: f64 },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("unsupported output width {0}")]
    BadOutput(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub clip_id: String,
    pub label: u8,
    pub score: f64,
}

impl ScoredUtterance {
    pub fn new(clip_id: impl Into<String>, label: u8, score: f64) -> Result<Self, EvalError> {
        let s = Self {
            clip_id: clip_id.into(),
            label,
            score,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), EvalError> {
        if self.label > 1 {
            return Err(EvalError::BadLabel(self.label));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(EvalError::BadScore {
                clip_id: self.clip_id.clone(),
                score: self.score,
            });
        }
        Ok(())
    }
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    if *t == f64::INFINITY {
        s.serialize_str("inf")
    } else if *t == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*t)
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("bad threshold {other}"))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub specificity_at_80_sens: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold_at_80_sens: f64,
    pub roc_points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_counts(scored: &[ScoredUtterance]) -> Result<(usize, usize), EvalError> {
    for s in scored {
        s.check()?;
    }
    let n_pos = scored.iter().filter(|s| s.label == 1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    Ok((n_pos, n_neg))
}

/// Cumulative (threshold, tp, fp) counts at each distinct score, highest
/// first, predicting positive when `score >= threshold`.
fn cumulative_counts(scored: &[ScoredUtterance]) -> Vec<(f64, u64, u64)> {
    let mut sorted: Vec<&ScoredUtterance> = scored.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, s) in sorted.iter().enumerate() {
        if s.label == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = i + 1 == sorted.len() || sorted[i + 1].score != s.score;
        if last_of_group {
            out.push((s.score, tp, fp));
        }
    }
    out
}

/// ROC from `(0, 0)` at threshold `+inf` through every distinct score.
pub fn roc_points(scored: &[ScoredUtterance]) -> Result<Vec<RocPoint>, EvalError> {
    let (p, n) = class_counts(scored)?;
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    pts.extend(cumulative_counts(scored).into_iter().map(|(t, tp, fp)| RocPoint {
        fpr: fp as f64 / n as f64,
        tpr: tp as f64 / p as f64,
        threshold: t,
    }));
    Ok(pts)
}

/// Trapezoidal area under the ROC. Accumulated on integer counts, so it
/// equals the Mann-Whitney statistic with half credit for ties.
pub fn auc(scored: &[ScoredUtterance]) -> Result<f64, EvalError> {
    let (p, n) = class_counts(scored)?;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    // twice the area, in units of one pos/neg pair
    let mut twice = 0u128;
    for (_, tp, fp) in cumulative_counts(scored) {
        twice += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(twice as f64 / (2.0 * p as f64 * n as f64))
}

/// Maximum specificity over thresholds whose sensitivity is at least
/// `min_sensitivity`, and the threshold achieving it. Candidates are
/// midpoints between consecutive distinct scores plus `+-inf`.
pub fn specificity_at_sensitivity(scored: &[ScoredUtterance], min_sensitivity: f64) -> Result<(f64, f64), EvalError> {
    let (p, n) = class_counts(scored)?;
    let mut distinct: Vec<f64> = scored.iter().map(|s| s.score).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let mut candidates = vec![f64::INFINITY];
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(f64::NEG_INFINITY);
    // Specificity falls as the threshold drops, so the first admissible
    // candidate is the best.
    for t in candidates {
        let tp = scored.iter().filter(|s| s.label == 1 && s.score >= t).count();
        if tp as f64 / p as f64 >= min_sensitivity {
            let tn = scored.iter().filter(|s| s.label == 0 && s.score < t).count();
            return Ok((tn as f64 / n as f64, t));
        }
    }
    unreachable!("threshold -inf reaches sensitivity 1")
}

/// Per-clip mean score across models. Every set must cover the same ids
/// with the same labels; output follows the first set's order.
pub fn ensemble(sets: &[Vec<ScoredUtterance>]) -> Result<Vec<ScoredUtterance>, EvalError> {
    let first = sets.first().ok_or_else(|| EvalError::IdMismatch("no score sets".into()))?;
    let lookups: Vec<HashMap<&str, &ScoredUtterance>> = sets
        .iter()
        .map(|s| s.iter().map(|u| (u.clip_id.as_str(), u)).collect())
        .collect();
    for (k, (set, lookup)) in sets.iter().zip(&lookups).enumerate() {
        if set.len() != first.len() || lookup.len() != set.len() {
            return Err(EvalError::IdMismatch(format!("set {k} has {} entries, set 0 has {}", set.len(), first.len())));
        }
    }
    first
        .iter()
        .map(|u| {
            let mut sum = 0.0;
            for (k, lookup) in lookups.iter().enumerate() {
                let other = lookup
                    .get(u.clip_id.as_str())
                    .ok_or_else(|| EvalError::IdMismatch(format!("{} missing from set {k}", u.clip_id)))?;
                if other.label != u.label {
                    return Err(EvalError::IdMismatch(format!("{} has conflicting labels", u.clip_id)));
                }
                sum += other.score;
            }
            ScoredUtterance::new(u.clip_id.clone(), u.label, sum / sets.len() as f64)
        })
        .collect()
}

pub fn evaluate(scored: &[ScoredUtterance]) -> Result<EvalReport, EvalError> {
    let (n_pos, n_neg) = class_counts(scored)?;
    let (spec, thr) = specificity_at_sensitivity(scored, 0.8)?;
    Ok(EvalReport {
        auc: auc(scored)?,
        specificity_at_80_sens: spec,
        threshold_at_80_sens: thr,
        roc_points: roc_points(scored)?,
        n_pos,
        n_neg,
    })
}

/// `fpr,tpr,threshold` lines with a header.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for p in points {
        let t = if p.threshold.is_infinite() {
            if p.threshold > 0.0 { "inf".to_string() } else { "-inf".to_string() }
        } else {
            p.threshold.to_string()
        };
        s.push_str(&format!("{},{},{t}\n", p.fpr, p.tpr));
    }
    s
}

/// Score of an already normalized feature matrix.
///
/// Two-class models give the mean positive-class softmax probability over
/// every loss-bearing output, single-output models give the sigmoid of the
/// mean output, and the JVAE gives the mean classifier probability.
pub fn score_normalized(model: &Model, m: &FeatureMatrix) -> Result<f64, EvalError> {
    let cfg = &model.config;
    let (input, mask) = model_inputs(cfg, m);
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &input, Mode::Eval, None)?;
    let count: f64 = mask.iter().sum();
    if cfg.arch == Arch::Jvae {
        let jv = fwd.jvae.expect("jvae outputs");
        let p = tape.value(jv.y_prob).data();
        return Ok(clamp01(p.iter().zip(&mask).map(|(p, w)| p * w).sum::<f64>() / count));
    }
    let out: &Tensor = tape.value(fwd.logits);
    let width = *out.shape().last().expect("non-scalar output");
    let rows = out.data().chunks_exact(width);
    match width {
        2 => {
            let s: f64 = rows
                .zip(&mask)
                .map(|(z, w)| w * sigmoid(z[1] - z[0]))
                .sum();
            Ok(clamp01(s / count))
        }
        1 => {
            let s: f64 = rows.zip(&mask).map(|(z, w)| w * z[0]).sum();
            Ok(clamp01(sigmoid(s / count)))
        }
        w => Err(EvalError::BadOutput(w)),
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Normalizes `m` as the model was trained, then scores it.
pub fn score_utterance(
    model: &Model,
    m: &FeatureMatrix,
    mode: NormMode,
    stats: Option<&NormalizationStats>,
) -> Result<f64, EvalError> {
    score_normalized(model, &normalize(m, mode, stats)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn su(id: usize, label: u8, score: f64) -> ScoredUtterance {
        ScoredUtterance::new(format!("c{id}"), label, score).unwrap()
    }

    #[test]
    fn roc_endpoints_and_monotone() {
        let s = vec![su(0, 1, 0.9), su(1, 0, 0.4), su(2, 1, 0.4), su(3, 0, 0.1)];
        let r = roc_points(&s).unwrap();
        assert_eq!((r[0].fpr, r[0].tpr), (0.0, 0.0));
        assert_eq!((r.last().unwrap().fpr, r.last().unwrap().tpr), (1.0, 1.0));
        assert!(r.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }

    #[test]
    fn threshold_round_trips_through_json() {
        let p = RocPoint {
            fpr: 0.0,
            tpr: 0.0,
            threshold: f64::INFINITY,
        };
        let j = serde_json::to_string(&p).unwrap();
        assert!(j.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<RocPoint>(&j).unwrap(), p);
    }

    #[test]
    fn bad_scores_rejected() {
        assert!(matches!(ScoredUtterance::new("a", 0, 1.5), Err(EvalError::BadScore { .. })));
        assert!(matches!(ScoredUtterance::new("a", 0, f64::NAN), Err(EvalError::BadScore { .. })));
        assert!(matches!(ScoredUtterance::new("a", 2, 0.5), Err(EvalError::BadLabel(2))));
    }
}

//! Windowing, the three training loops, AdamW, and the k-fold harness.

mod folds;
mod optim;
mod sequence;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::eval::{auc, score_normalized, EvalError, ScoredUtterance};
use crate::features::{FeatureError, FeatureMatrix, NormMode, NormalizationStats};
use crate::losses::{auroc_loss, class_weights, jvae_loss, JvaeLossWeights, LossError};
use crate::models::{output_rows, Arch, CheckpointMeta, Mode, Model, ModelError, NormInfo};
use crate::util::derive_seed;

pub use folds::{check_leakage, run_folds, select_best, DatasetClip, FoldSpec};
pub use optim::AdamW;
pub use sequence::{make_sequences, model_inputs, Window};
use sequence::{stack_windows, window_mask};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("training set has no positive clips")]
    NoPositives,
    #[error("training set has no negative clips")]
    NoNegatives,
    #[error("loss became non-finite ({loss}) in epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("fold {fold}: training clip {clip_id} derives from validation clip {source_id}")]
    LeakageDetected {
        fold: usize,
        clip_id: String,
        source_id: String,
    },
    #[error("invalid fold: {0}")]
    BadFold(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Auroc,
    Jvae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Auroc => "auroc",
            LossKind::Jvae => "jvae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub wt_pos: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub norm_mode: NormMode,
    pub jvae_weights: JvaeLossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            wt_pos: 1.0,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            norm_mode: NormMode::UttWise,
            jvae_weights: JvaeLossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly 0 is accepted so a frozen run can be
    /// used as a control.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if !(self.wt_pos.is_finite() && self.wt_pos > 0.0) {
            return bad("wt_pos must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        self.jvae_weights.validate()?;
        Ok(())
    }
}

/// A normalized feature matrix with its clip label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub features: FeatureMatrix,
    pub label: u8,
}

impl LabeledClip {
    pub fn id(&self) -> &str {
        &self.features.clip_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub steps: usize,
    /// Mean reconstruction term over the epoch's steps (JVAE only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recon_mse: Option<f64>,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// Everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.fold == other.fold
            && self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_auc.to_bits() == other.val_auc.to_bits()
            && self.steps == other.steps
            && self.recon_mse.map(f64::to_bits) == other.recon_mse.map(f64::to_bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold_id: usize,
    /// Weights from the epoch with the highest validation AUC.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub loss: LossKind,
    pub norm_mode: NormMode,
    /// Training-split mean under global normalization.
    pub norm_stats: Option<NormalizationStats>,
}

impl FoldResult {
    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            fold: Some(self.fold_id),
            epoch: Some(self.best_epoch),
            val_auc: Some(self.best_val_auc),
            loss: Some(self.loss.name().to_string()),
            norm: Some(NormInfo::new(self.norm_mode, self.norm_stats.as_ref())),
        }
    }
}

/// Validation AUC of `model` over normalized clips.
pub fn validation_auc(model: &Model, val: &[LabeledClip]) -> Result<f64, TrainError> {
    let scored = val
        .iter()
        .map(|c| ScoredUtterance::new(c.id(), c.label, score_normalized(model, &c.features)?))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(auc(&scored)?)
}

/// Pairing schedule for one AUROC epoch: every negative in order, each
/// with a uniformly drawn positive.
pub fn auroc_pairs(n_neg: usize, n_pos: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..n_neg).map(|i| (i, rng.random_range(0..n_pos))).collect()
}

/// Items of one epoch for mini-batch losses: (clip, window) for sequence
/// models, (clip, frame) otherwise.
struct BatchData<'a> {
    clips: &'a [LabeledClip],
    windows: Vec<Vec<Window>>,
    items: Vec<(usize, usize)>,
}

impl<'a> BatchData<'a> {
    fn new(model: &Model, clips: &'a [LabeledClip]) -> Self {
        let cfg = &model.config;
        let windows: Vec<Vec<Window>> = if cfg.is_sequence() {
            clips
                .iter()
                .map(|c| make_sequences(&c.features, cfg.seq_len, cfg.context_len, cfg.seq_len))
                .collect()
        } else {
            Vec::new()
        };
        let items = clips
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                let n = if cfg.is_sequence() { windows[i].len() } else { c.features.n_frames() };
                (0..n).map(move |j| (i, j))
            })
            .collect();
        Self { clips, windows, items }
    }

    /// Input tensor, per-row labels and per-row loss masks.
    fn batch(&self, model: &Model, items: &[(usize, usize)]) -> (Tensor, Vec<u8>, Vec<f64>) {
        let cfg = &model.config;
        let mut labels = Vec::new();
        let mut mask = Vec::new();
        if cfg.is_sequence() {
            let refs: Vec<&Window> = items.iter().map(|&(c, w)| &self.windows[c][w]).collect();
            for (&(c, _), w) in items.iter().zip(&refs) {
                let y = self.clips[c].label;
                if cfg.per_frame() {
                    labels.extend(std::iter::repeat_n(y, cfg.seq_len));
                    mask.extend(window_mask(w, cfg.seq_len));
                } else {
                    labels.push(y);
                    mask.push(1.0);
                }
            }
            (stack_windows(&refs, cfg), labels, mask)
        } else {
            let data: Vec<f64> = items
                .iter()
                .flat_map(|&(c, t)| self.clips[c].features.row(t).iter().copied())
                .collect();
            for &(c, _) in items {
                labels.push(self.clips[c].label);
                mask.push(1.0);
            }
            (Tensor::new(vec![items.len(), cfg.input_dim], data).expect("batch shape"), labels, mask)
        }
    }
}

fn check_classes(clips: &[LabeledClip]) -> Result<(), TrainError> {
    if !clips.iter().any(|c| c.label == 1) {
        return Err(TrainError::NoPositives);
    }
    if !clips.iter().any(|c| c.label == 0) {
        return Err(TrainError::NoNegatives);
    }
    Ok(())
}

/// Shared epoch loop: runs `epoch_fn` for each epoch, scores the
/// validation set, and keeps the best-AUC weights.
fn fit<F>(
    mut model: Model,
    val: &[LabeledClip],
    cfg: &TrainConfig,
    fold_id: usize,
    mut epoch_fn: F,
) -> Result<FoldResult, TrainError>
where
    F: FnMut(&mut Model, &mut AdamW, &mut ChaCha8Rng) -> Result<(f64, usize, Option<f64>), TrainError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train"));
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let (loss, steps, recon_mse) = epoch_fn(&mut model, &mut opt, &mut rng)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss });
        }
        let val_auc = validation_auc(&model, val)?;
        history.push(EpochRecord {
            fold: fold_id,
            epoch,
            train_loss: loss,
            val_auc,
            steps,
            recon_mse,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|b| val_auc > b.1) {
            best = Some((epoch, val_auc, model.clone()));
        }
    }
    let (best_epoch, best_val_auc, model) = best.expect("at least one epoch");
    Ok(FoldResult {
        fold_id,
        model,
        history,
        best_epoch,
        best_val_auc,
        loss: cfg.loss,
        norm_mode: cfg.norm_mode,
        norm_stats: None,
    })
}

fn finite_step(loss: f64, epoch_hint: usize) -> Result<f64, TrainError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TrainError::Diverged { epoch: epoch_hint, loss })
    }
}

/// Mini-batch training with class-weighted cross-entropy.
pub fn train_ce(
    model: Model,
    train: &[LabeledClip],
    val: &[LabeledClip],
    cfg: &TrainConfig,
    fold_id: usize,
) -> Result<FoldResult, TrainError> {
    cfg.validate()?;
    if model.config.out_dim != 2 || model.config.arch == Arch::Jvae {
        return Err(TrainError::BadConfig("cross-entropy needs a two-output classifier".into()));
    }
    check_classes(train)?;
    let data = BatchData::new(&model, train);
    let mut epoch = 0;
    fit(model, val, cfg, fold_id, |model, opt, rng| {
        epoch += 1;
        let mut order = data.items.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, labels, mask) = data.batch(model, chunk);
            let weights: Vec<f64> = class_weights(&labels, cfg.wt_pos).iter().zip(&mask).map(|(w, m)| w * m).collect();
            let idx: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &input, Mode::Train, None)?;
            let rows = output_rows(&mut tape, fwd.logits)?;
            let loss = tape.softmax_ce(rows, &idx, &weights)?;
            total += finite_step(tape.value(loss).item(), epoch)?;
            tape.backward(loss, &mut model.params)?;
            model.update_running_stats(&fwd.bn_batch);
            opt.step(&mut model.params);
            steps += 1;
        }
        Ok((total / steps as f64, steps, None))
    })
}

/// Masked mean of a single-output model over a whole clip.
fn utterance_output(tape: &mut Tape, model: &Model, input: &Tensor, mask: &[f64]) -> Result<(Var, Vec<crate::autodiff::BnStats>), TrainError> {
    let fwd = model.forward(tape, input, Mode::Train, None)?;
    let rows = output_rows(tape, fwd.logits)?;
    let m = tape.constant(Tensor::new(vec![mask.len(), 1], mask.to_vec())?);
    let prod = tape.mul(rows, m)?;
    let s = tape.sum(prod);
    let count: f64 = mask.iter().sum();
    Ok((tape.scale(s, 1.0 / count), fwd.bn_batch))
}

/// Pairwise AUROC training. Each step pairs the next negative clip with a
/// random positive and compares their utterance-mean outputs.
pub fn train_auroc(
    model: Model,
    train: &[LabeledClip],
    val: &[LabeledClip],
    cfg: &TrainConfig,
    fold_id: usize,
) -> Result<FoldResult, TrainError> {
    cfg.validate()?;
    if model.config.out_dim != 1 || model.config.arch == Arch::Jvae {
        return Err(TrainError::BadConfig("AUROC training needs a single-output classifier".into()));
    }
    check_classes(train)?;
    let inputs: Vec<(Tensor, Vec<f64>)> = train.iter().map(|c| model_inputs(&model.config, &c.features)).collect();
    let pos: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == 1).collect();
    let neg: Vec<usize> = (0..train.len()).filter(|&i| train[i].label == 0).collect();
    let mut epoch = 0;
    fit(model, val, cfg, fold_id, |model, opt, rng| {
        epoch += 1;
        let mut total = 0.0;
        let pairs = auroc_pairs(neg.len(), pos.len(), rng);
        for &(n, p) in &pairs {
            let (xp, mp) = &inputs[pos[p]];
            let (xn, mn) = &inputs[neg[n]];
            let mut tape = Tape::new();
            let (vp, bp) = utterance_output(&mut tape, model, xp, mp)?;
            let (vn, bn) = utterance_output(&mut tape, model, xn, mn)?;
            let loss = auroc_loss(&mut tape, vp, vn)?;
            total += finite_step(tape.value(loss).item(), epoch)?;
            tape.backward(loss, &mut model.params)?;
            model.update_running_stats(&bp);
            model.update_running_stats(&bn);
            opt.step(&mut model.params);
        }
        Ok((total / pairs.len() as f64, pairs.len(), None))
    })
}

/// Frame-level JVAE training with a fresh latent sample per step.
pub fn train_jvae(
    model: Model,
    train: &[LabeledClip],
    val: &[LabeledClip],
    cfg: &TrainConfig,
    fold_id: usize,
) -> Result<FoldResult, TrainError> {
    cfg.validate()?;
    if model.config.arch != Arch::Jvae {
        return Err(TrainError::BadConfig("JVAE loss needs the jvae architecture".into()));
    }
    check_classes(train)?;
    let data = BatchData::new(&model, train);
    let latent = model.config.latent();
    let mut epoch = 0;
    fit(model, val, cfg, fold_id, |model, opt, rng| {
        epoch += 1;
        let mut order = data.items.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut mse = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (input, labels, _) = data.batch(model, chunk);
            let eps = Tensor::from_fn(&[chunk.len(), latent], |_| rng.sample(StandardNormal));
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &input, Mode::Train, Some(&eps))?;
            let out = fwd.jvae.expect("jvae outputs");
            let x = tape.constant(input);
            let terms = jvae_loss(&mut tape, x, &out, &labels, cfg.wt_pos, &cfg.jvae_weights)?;
            total += finite_step(tape.value(terms.total).item(), epoch)?;
            mse += tape.value(terms.mse).item();
            tape.backward(terms.total, &mut model.params)?;
            opt.step(&mut model.params);
            steps += 1;
        }
        Ok((total / steps as f64, steps, Some(mse / steps as f64)))
    })
}

/// Dispatches on `cfg.loss`.
pub fn train(
    model: Model,
    train_set: &[LabeledClip],
    val: &[LabeledClip],
    cfg: &TrainConfig,
    fold_id: usize,
) -> Result<FoldResult, TrainError> {
    match cfg.loss {
        LossKind::Ce => train_ce(model, train_set, val, cfg, fold_id),
        LossKind::Auroc => train_auroc(model, train_set, val, cfg, fold_id),
        LossKind::Jvae => train_jvae(model, train_set, val, cfg, fold_id),
    }
}

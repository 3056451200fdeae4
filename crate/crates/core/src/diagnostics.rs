//! Finite-difference gradient checks of every architecture and loss at
//! toy size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, AutodiffError, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::losses::{auroc_loss, jvae_loss, weighted_ce, JvaeLossWeights, LossError};
use crate::models::{output_rows, LstmVariant, Mode, Model, ModelConfig, ModelError};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub arch: String,
    pub loss: String,
    pub max_rel_error: f64,
    pub passed: bool,
    pub report: GradCheckReport,
}

const TOY_INPUT: usize = 12;
const TOY_HIDDEN: usize = 8;
const TOY_SEQ: usize = 5;
const TOY_CONTEXT: usize = 3;

fn toy(mut cfg: ModelConfig) -> ModelConfig {
    cfg.input_dim = TOY_INPUT;
    cfg.hidden_dim = TOY_HIDDEN;
    cfg.seq_len = TOY_SEQ;
    cfg.context_len = TOY_CONTEXT;
    cfg
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn to_ad(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => AutodiffError::BadArgument(other.to_string()),
    }
}

fn loss_to_ad(e: LossError) -> AutodiffError {
    match e {
        LossError::Autodiff(a) => a,
        other => AutodiffError::BadArgument(other.to_string()),
    }
}

fn ce_entry(name: &str, cfg: ModelConfig, seed: u64, h: f64, tol: f64) -> Result<SuiteEntry, AutodiffError> {
    let model = Model::new(toy(cfg), seed).map_err(to_ad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let n = 4;
    let input = random_input(&mut rng, &model.input_shape(n));
    let rows = if model.config.per_frame() && model.config.is_sequence() { n * TOY_SEQ } else { n };
    let labels: Vec<u8> = (0..rows).map(|i| (i % 3 == 0) as u8).collect();
    let mut store = model.params.clone();
    let report = grad_check(
        &mut store,
        |tape: &mut Tape, s: &ParamStore| {
            let fwd = model.forward_with(tape, s, &input, Mode::Train, None).map_err(to_ad)?;
            let logits = output_rows(tape, fwd.logits).map_err(to_ad)?;
            weighted_ce(tape, logits, &labels, 2.0).map_err(loss_to_ad)
        },
        h,
        tol,
    )?;
    Ok(entry(name, "weighted_ce", report))
}

fn auroc_entry(name: &str, cfg: ModelConfig, seed: u64, h: f64, tol: f64) -> Result<SuiteEntry, AutodiffError> {
    let mut cfg = toy(cfg);
    cfg.out_dim = 1;
    let model = Model::new(cfg, seed).map_err(to_ad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    // a two-window positive clip and a one-window negative clip
    let pos = random_input(&mut rng, &model.input_shape(2));
    let neg = random_input(&mut rng, &model.input_shape(1));
    let mut store = model.params.clone();
    let report = grad_check(
        &mut store,
        |tape: &mut Tape, s: &ParamStore| {
            let utt = |tape: &mut Tape, x: &Tensor| -> Result<Var, AutodiffError> {
                let fwd = model.forward_with(tape, s, x, Mode::Train, None).map_err(to_ad)?;
                Ok(tape.mean(fwd.logits))
            };
            let vp = utt(tape, &pos)?;
            let vn = utt(tape, &neg)?;
            auroc_loss(tape, vp, vn).map_err(loss_to_ad)
        },
        h,
        tol,
    )?;
    Ok(entry(name, "auroc", report))
}

fn jvae_entry(seed: u64, h: f64, tol: f64) -> Result<SuiteEntry, AutodiffError> {
    let model = Model::new(toy(ModelConfig::jvae(2, TOY_HIDDEN)), seed).map_err(to_ad)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let n = 5;
    let input = random_input(&mut rng, &model.input_shape(n));
    let eps = random_input(&mut rng, &[n, model.config.latent()]);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let weights = JvaeLossWeights::default();
    let mut store = model.params.clone();
    let report = grad_check(
        &mut store,
        |tape: &mut Tape, s: &ParamStore| {
            let fwd = model.forward_with(tape, s, &input, Mode::Train, Some(&eps)).map_err(to_ad)?;
            let out = fwd.jvae.expect("jvae outputs");
            let x = tape.constant(input.clone());
            Ok(jvae_loss(tape, x, &out, &labels, 2.0, &weights).map_err(loss_to_ad)?.total)
        },
        h,
        tol,
    )?;
    Ok(entry("jvae", "jvae", report))
}

fn entry(arch: &str, loss: &str, report: GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        arch: arch.to_string(),
        loss: loss.to_string(),
        max_rel_error: report.max_rel_error(),
        passed: report.passed(),
        report,
    }
}

/// Every architecture with its training objective: the four LSTM
/// variants, CNN with and without residual blocks, the MLP, and the JVAE
/// under cross-entropy, AUROC or the JVAE loss.
pub fn gradient_suite(seed: u64, h: f64, tol: f64) -> Result<Vec<SuiteEntry>, AutodiffError> {
    let lstm = |v| ModelConfig::lstm(v, 1, TOY_HIDDEN, TOY_SEQ);
    Ok(vec![
        ce_entry("lstm_uni", lstm(LstmVariant::Uni), seed, h, tol)?,
        ce_entry("lstm_bidir", lstm(LstmVariant::Bidir), seed, h, tol)?,
        ce_entry("lstm_seq_to_concat", lstm(LstmVariant::SeqToConcat), seed, h, tol)?,
        ce_entry("lstm_seq_to_last1", lstm(LstmVariant::SeqToLast1), seed, h, tol)?,
        ce_entry("lstm_uni_2layer", ModelConfig::lstm(LstmVariant::Uni, 2, TOY_HIDDEN, TOY_SEQ), seed, h, tol)?,
        auroc_entry("lstm_uni", lstm(LstmVariant::Uni), seed, h, tol)?,
        auroc_entry("lstm_seq_to_last1", lstm(LstmVariant::SeqToLast1), seed, h, tol)?,
        ce_entry("cnn", ModelConfig::cnn(2, TOY_HIDDEN), seed, h, tol)?,
        ce_entry("cnn_residual", ModelConfig::resnet(3), seed, h, tol)?,
        ce_entry("mlp", ModelConfig::mlp(2, TOY_HIDDEN), seed, h, tol)?,
        jvae_entry(seed, h, tol)?,
    ])
}

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnStats, ParamStore, Tape, Tensor, Var};

use super::{add_linear, linear, uniform, Forward, Mode, ModelConfig, ModelError};

/// Registers the conv stack and returns the number of batchnorm layers.
///
/// Convolutions carry no bias: the following batchnorm shift makes one
/// redundant.
pub(super) fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> usize {
    let h = cfg.hidden_dim;
    let mut cin = cfg.in_channels;
    for l in 0..cfg.layers {
        let bound = 1.0 / ((cin * cfg.filter_len) as f64).sqrt();
        store.add(format!("conv{l}.w"), uniform(rng, &[h, cin, cfg.filter_len], bound));
        store.add(format!("bn{l}.gamma"), Tensor::filled(&[h], 1.0));
        store.add(format!("bn{l}.beta"), Tensor::zeros(&[h]));
        cin = h;
    }
    add_linear(store, rng, "out", h, cfg.out_dim);
    cfg.layers
}

struct Ctx<'a> {
    store: &'a ParamStore,
    mode: Mode,
    running: &'a [BnStats],
    batch: Vec<BnStats>,
}

/// conv -> batchnorm, without the activation.
fn conv_bn(tape: &mut Tape, ctx: &mut Ctx, l: usize, x: Var) -> Result<Var, ModelError> {
    let s = ctx.store;
    let w = tape.param(s, s.id(&format!("conv{l}.w"))?);
    let g = tape.param(s, s.id(&format!("bn{l}.gamma"))?);
    let b = tape.param(s, s.id(&format!("bn{l}.beta"))?);
    let y = tape.conv1d(x, w, None)?;
    match ctx.mode {
        Mode::Train => {
            let (y, stats) = tape.batchnorm_train(y, g, b)?;
            ctx.batch.push(stats);
            Ok(y)
        }
        Mode::Eval => {
            let stats = ctx
                .running
                .get(l)
                .ok_or_else(|| ModelError::BadShape(format!("missing running stats for layer {l}")))?;
            Ok(tape.batchnorm_eval(y, g, b, stats)?)
        }
    }
}

pub(super) fn forward(
    cfg: &ModelConfig,
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    mode: Mode,
    running: &[BnStats],
) -> Result<Forward, ModelError> {
    let n = tape.shape(x)[0];
    // channel c holds the c-th contiguous block of the frame vector
    let len = cfg.input_dim / cfg.in_channels;
    let x = tape.reshape(x, &[n, cfg.in_channels, len])?;
    let mut ctx = Ctx { store, mode, running, batch: Vec::new() };

    let a = conv_bn(tape, &mut ctx, 0, x)?;
    let mut h = tape.relu(a);
    let mut l = 1;
    while l < cfg.layers {
        if cfg.residual && l + 1 < cfg.layers {
            let a = conv_bn(tape, &mut ctx, l, h)?;
            let a = tape.relu(a);
            let b = conv_bn(tape, &mut ctx, l + 1, a)?;
            let sum = tape.add(b, h)?;
            h = tape.relu(sum);
            l += 2;
        } else {
            let a = conv_bn(tape, &mut ctx, l, h)?;
            h = tape.relu(a);
            l += 1;
        }
    }
    let pooled = tape.mean_last_axis(h);
    Ok(Forward {
        logits: linear(tape, store, "out", pooled)?,
        jvae: None,
        pre_pool: Some(h),
        bn_batch: ctx.batch,
    })
}

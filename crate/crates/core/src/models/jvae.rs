use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};

use super::{add_linear, linear, Forward, JvaeOutputs, Mode, ModelConfig, ModelError};

pub(super) fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let (h, lat, d) = (cfg.hidden_dim, cfg.latent(), cfg.input_dim);
    let mut fan_in = d;
    for l in 0..cfg.layers {
        add_linear(store, rng, &format!("enc{l}"), fan_in, h);
        fan_in = h;
    }
    add_linear(store, rng, "mu", h, lat);
    add_linear(store, rng, "log_var", h, lat);
    let mut fan_in = lat;
    for l in 0..cfg.layers {
        add_linear(store, rng, &format!("dec{l}"), fan_in, h);
        fan_in = h;
    }
    add_linear(store, rng, "dec_out", h, d);
    add_linear(store, rng, "cls_hidden", d + lat, h);
    add_linear(store, rng, "cls_out", h, 1);
}

fn mlp_stack(tape: &mut Tape, store: &ParamStore, prefix: &str, layers: usize, x: Var) -> Result<Var, ModelError> {
    let mut h = x;
    for l in 0..layers {
        let a = linear(tape, store, &format!("{prefix}{l}"), h)?;
        h = tape.relu(a);
    }
    Ok(h)
}

/// Per-frame joint VAE. With `eps` the latent is the reparameterized draw
/// `mu + exp(log_var / 2) * eps`; without it the latent is `mu`.
pub(super) fn forward(
    cfg: &ModelConfig,
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    _mode: Mode,
    eps: Option<&Tensor>,
) -> Result<Forward, ModelError> {
    let enc = mlp_stack(tape, store, "enc", cfg.layers, x)?;
    let mu = linear(tape, store, "mu", enc)?;
    let log_var = linear(tape, store, "log_var", enc)?;
    let z = match eps {
        Some(e) => tape.gaussian_sample(mu, log_var, e)?,
        None => mu,
    };
    let dec = mlp_stack(tape, store, "dec", cfg.layers, z)?;
    let x_hat = linear(tape, store, "dec_out", dec)?;
    let xz = tape.concat(&[x, z], 1)?;
    let c = linear(tape, store, "cls_hidden", xz)?;
    let c = tape.relu(c);
    let y_logit = linear(tape, store, "cls_out", c)?;
    let y_prob = tape.sigmoid(y_logit);
    Ok(Forward {
        logits: y_logit,
        jvae: Some(JvaeOutputs {
            x_hat,
            y_logit,
            y_prob,
            mu,
            log_var,
            z,
        }),
        pre_pool: None,
        bn_batch: Vec::new(),
    })
}

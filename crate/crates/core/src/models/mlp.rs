use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};

use super::{add_linear, linear, Forward, ModelConfig, ModelError};

pub(super) fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let mut fan_in = cfg.input_dim;
    for l in 0..cfg.layers {
        add_linear(store, rng, &format!("mlp{l}"), fan_in, cfg.hidden_dim);
        fan_in = cfg.hidden_dim;
    }
    add_linear(store, rng, "out", fan_in, cfg.out_dim);
}

pub(super) fn forward(cfg: &ModelConfig, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Forward, ModelError> {
    let mut h = x;
    for l in 0..cfg.layers {
        let a = linear(tape, store, &format!("mlp{l}"), h)?;
        h = tape.relu(a);
    }
    Ok(Forward {
        logits: linear(tape, store, "out", h)?,
        jvae: None,
        pre_pool: None,
        bn_batch: Vec::new(),
    })
}

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};

use super::{add_linear, linear, uniform, Forward, LstmVariant, ModelConfig, ModelError};

fn directions(cfg: &ModelConfig) -> &'static [&'static str] {
    if cfg.variant == LstmVariant::Bidir {
        &["fwd", "bwd"]
    } else {
        &["fwd"]
    }
}

/// Width of one frame of the top layer's output.
pub(super) fn frame_width(cfg: &ModelConfig) -> usize {
    cfg.hidden_dim * directions(cfg).len()
}

/// Width of the final layer's input.
pub(super) fn head_width(cfg: &ModelConfig) -> usize {
    match cfg.variant {
        LstmVariant::SeqToConcat => frame_width(cfg) * cfg.seq_len,
        _ => frame_width(cfg),
    }
}

pub(super) fn init(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let h = cfg.hidden_dim;
    let bound = 1.0 / (h as f64).sqrt();
    let mut input = cfg.input_dim;
    for l in 0..cfg.layers {
        for dir in directions(cfg) {
            let p = format!("lstm{l}.{dir}");
            store.add(format!("{p}.w_ih"), uniform(rng, &[input, 4 * h], bound));
            store.add(format!("{p}.w_hh"), uniform(rng, &[h, 4 * h], bound));
            let mut b = uniform(rng, &[4 * h], bound);
            // gate order i, f, g, o; forget gate starts open
            b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v += 1.0);
            store.add(format!("{p}.b"), b);
        }
        input = frame_width(cfg);
    }
    add_linear(store, rng, "out", head_width(cfg), cfg.out_dim);
}

/// One direction of one layer over `x [B, T, D]`; returns `[B, T, H]` in
/// time order.
fn run_direction(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, h: usize, reverse: bool) -> Result<Var, ModelError> {
    let s = tape.shape(x).to_vec();
    let (b, t_len, d) = (s[0], s[1], s[2]);
    let w_ih = tape.param(store, store.id(&format!("{prefix}.w_ih"))?);
    let w_hh = tape.param(store, store.id(&format!("{prefix}.w_hh"))?);
    let bias = tape.param(store, store.id(&format!("{prefix}.b"))?);

    let flat = tape.reshape(x, &[b * t_len, d])?;
    let proj = tape.matmul(flat, w_ih)?;
    let proj = tape.add_bias(proj, bias)?;
    let proj = tape.reshape(proj, &[b, t_len, 4 * h])?;

    let mut hs: Vec<Option<Var>> = vec![None; t_len];
    let mut state: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for t in order {
        let xt = tape.slice(proj, 1, t, t + 1)?;
        let mut gates = tape.reshape(xt, &[b, 4 * h])?;
        if let Some((h_prev, _)) = state {
            let rec = tape.matmul(h_prev, w_hh)?;
            gates = tape.add(gates, rec)?;
        }
        let gi = tape.slice(gates, 1, 0, h)?;
        let gf = tape.slice(gates, 1, h, 2 * h)?;
        let gg = tape.slice(gates, 1, 2 * h, 3 * h)?;
        let go = tape.slice(gates, 1, 3 * h, 4 * h)?;
        let i = tape.sigmoid(gi);
        let g = tape.tanh(gg);
        let o = tape.sigmoid(go);
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let f = tape.sigmoid(gf);
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h_t = tape.mul(o, tc)?;
        hs[t] = Some(tape.reshape(h_t, &[b, 1, h])?);
        state = Some((h_t, c));
    }
    let hs: Vec<Var> = hs.into_iter().map(|v| v.expect("every step visited")).collect();
    Ok(tape.concat(&hs, 1)?)
}

pub(super) fn forward(cfg: &ModelConfig, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Forward, ModelError> {
    let b = tape.shape(x)[0];
    let (ctx, seq, t_len) = (cfg.context_len, cfg.seq_len, cfg.window_len());
    let mut layer_in = x;
    for l in 0..cfg.layers {
        let outs = directions(cfg)
            .iter()
            .map(|dir| run_direction(tape, store, &format!("lstm{l}.{dir}"), layer_in, cfg.hidden_dim, *dir == "bwd"))
            .collect::<Result<Vec<_>, _>>()?;
        layer_in = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    }
    let width = frame_width(cfg);
    let logits = match cfg.variant {
        LstmVariant::Uni | LstmVariant::Bidir => {
            let tail = tape.slice(layer_in, 1, ctx, t_len)?;
            let rows = tape.reshape(tail, &[b * seq, width])?;
            let y = linear(tape, store, "out", rows)?;
            tape.reshape(y, &[b, seq, cfg.out_dim])?
        }
        LstmVariant::SeqToConcat => {
            let tail = tape.slice(layer_in, 1, ctx, t_len)?;
            let sv = tape.reshape(tail, &[b, seq * width])?;
            linear(tape, store, "out", sv)?
        }
        LstmVariant::SeqToLast1 => {
            let last = tape.slice(layer_in, 1, t_len - 1, t_len)?;
            let last = tape.reshape(last, &[b, width])?;
            linear(tape, store, "out", last)?
        }
    };
    Ok(Forward {
        logits,
        jvae: None,
        pre_pool: None,
        bn_batch: Vec::new(),
    })
}

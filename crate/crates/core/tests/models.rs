use coughscreen_core::autodiff::{BnStats, Tape, Tensor, BN_EPS};
use coughscreen_core::features::FEATURE_DIM;
use coughscreen_core::models::{
    load_checkpoint, read_checkpoint, save_checkpoint, Arch, CheckpointMeta, LstmVariant, Mode, Model, ModelConfig,
    ModelError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn input(model: &Model, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&model.input_shape(n), |_| rng.random_range(-1.0..1.0))
}

fn run(model: &Model, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, x, Mode::Eval, None).unwrap();
    tape.value(f.logits).clone()
}

fn param_shape(model: &Model, name: &str) -> Vec<usize> {
    let id = model.params.id(name).unwrap();
    model.params.get(id).value.shape().to_vec()
}

#[test]
fn uni_lstm_emits_per_frame_logits() {
    let m = Model::new(ModelConfig::lstm(LstmVariant::Uni, 1, 48, 30), 1).unwrap();
    assert_eq!(m.input_shape(4), vec![4, 50, FEATURE_DIM]);
    assert_eq!(run(&m, &input(&m, 4, 2)).shape(), &[4, 30, 2]);
}

#[test]
fn head_widths_follow_variant() {
    let concat = Model::new(ModelConfig::lstm(LstmVariant::SeqToConcat, 1, 48, 30), 1).unwrap();
    assert_eq!(param_shape(&concat, "out.w"), vec![1440, 2]);
    let bidir = Model::new(ModelConfig::lstm(LstmVariant::Bidir, 1, 48, 30), 1).unwrap();
    assert_eq!(param_shape(&bidir, "out.w"), vec![96, 2]);
    let last = Model::new(ModelConfig::lstm(LstmVariant::SeqToLast1, 1, 48, 30), 1).unwrap();
    assert_eq!(run(&last, &input(&last, 4, 3)).shape(), &[4, 2]);
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let m = Model::new(ModelConfig::lstm(LstmVariant::Uni, 1, 16, 5), 4).unwrap();
    let b = &m.params.get(m.params.id("lstm0.fwd.b").unwrap()).value;
    let bound = 1.0 / 4.0;
    for (k, v) in b.data().iter().enumerate() {
        let shift = if (16..32).contains(&k) { 1.0 } else { 0.0 };
        assert!((v - shift).abs() <= bound, "{k}: {v}");
    }
}

#[test]
fn seq_len_one_concat_equals_last1() {
    let mut a = Model::new(ModelConfig::lstm(LstmVariant::SeqToConcat, 1, 8, 1), 5).unwrap();
    let b = Model::new(ModelConfig::lstm(LstmVariant::SeqToLast1, 1, 8, 1), 5).unwrap();
    assert_eq!(param_shape(&a, "out.w"), param_shape(&b, "out.w"));
    a.params = b.params.clone();
    let x = input(&a, 3, 6);
    assert_eq!(run(&a, &x), run(&b, &x));
}

#[test]
fn context_frames_carry_state_but_emit_nothing() {
    let cfg = ModelConfig { context_len: 4, ..ModelConfig::lstm(LstmVariant::Uni, 1, 8, 3) };
    let m = Model::new(cfg, 7).unwrap();
    let x = input(&m, 1, 8);
    let base = run(&m, &x);
    assert_eq!(base.shape(), &[1, 3, 2]);
    let mut y = x.clone();
    y.data_mut()[FEATURE_DIM] += 0.5; // frame 1 lies in the context
    assert_ne!(run(&m, &y), base);
    // the frame-by-frame model is causal: the first output depends on
    // frames up to and including the first loss-bearing frame only
    let mut z = x.clone();
    let last = (4 + 2) * FEATURE_DIM;
    z.data_mut()[last] += 0.5;
    let out = run(&m, &z);
    assert_eq!(&out.data()[..2], &base.data()[..2]);
}

#[test]
fn forward_is_deterministic() {
    for cfg in [
        ModelConfig::lstm(LstmVariant::Bidir, 2, 8, 4),
        ModelConfig::cnn(2, 8),
        ModelConfig::jvae(3, 8),
    ] {
        let m = Model::new(cfg, 9).unwrap();
        let x = input(&m, 3, 10);
        assert_eq!(run(&m, &x), run(&m, &x));
        assert_eq!(Model::new(m.config.clone(), 9).unwrap(), m);
    }
}

#[test]
fn cnn_parameter_count_closed_form() {
    let m = Model::new(ModelConfig::cnn(4, 64), 1).unwrap();
    let (h, k, cin, out) = (64, 5, 3, 2);
    let expect = (h * cin * k + 2 * h) + 3 * (h * h * k + 2 * h) + (h * out + out);
    assert_eq!(m.num_params(), expect);
    assert_eq!(run(&m, &input(&m, 5, 1)).shape(), &[5, 2]);
}

#[test]
fn cnn_identity_kernel_passes_relu_of_input() {
    let cfg = ModelConfig { hidden_dim: 3, ..ModelConfig::cnn(1, 3) };
    let mut m = Model::new(cfg, 2).unwrap();
    let id = m.params.id("conv0.w").unwrap();
    let w = &mut m.params.get_mut(id).value;
    w.data_mut().fill(0.0);
    for c in 0..3 {
        w.data_mut()[(c * 3 + c) * 5 + 2] = 1.0;
    }
    // running statistics that make batchnorm the identity
    m.bn_running = vec![BnStats { mean: vec![0.0; 3], var: vec![1.0 - BN_EPS; 3] }];
    let x = input(&m, 2, 3);
    let mut tape = Tape::new();
    let f = m.forward(&mut tape, &x, Mode::Eval, None).unwrap();
    let pre = tape.value(f.pre_pool.unwrap());
    assert_eq!(pre.shape(), &[2, 3, 63]);
    for (a, b) in pre.data().iter().zip(x.data()) {
        assert!((a - b.max(0.0)).abs() < 1e-12);
    }
}

#[test]
fn cnn_two_layer_128_and_residual_build() {
    let m = Model::new(ModelConfig::cnn(2, 128), 1).unwrap();
    assert_eq!(run(&m, &input(&m, 2, 4)).shape(), &[2, 2]);
    let r = Model::new(ModelConfig::resnet(5), 1).unwrap();
    assert_eq!(param_shape(&r, "conv1.w"), vec![32, 32, 3]);
    assert_eq!(run(&r, &input(&r, 2, 4)).shape(), &[2, 2]);
}

#[test]
fn mlp_without_hidden_layers_is_logistic_regression() {
    let mut m = Model::new(ModelConfig::mlp(0, 8), 1).unwrap();
    let names: Vec<_> = m.params.iter().map(|p| p.name.clone()).collect();
    assert_eq!(names, vec!["out.w", "out.b"]);
    let w = m.params.id("out.w").unwrap();
    m.params.get_mut(w).value.data_mut().fill(0.0);
    let b = m.params.id("out.b").unwrap();
    m.params.get_mut(b).value = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
    let out = run(&m, &Tensor::zeros(&[2, FEATURE_DIM]));
    assert_eq!(out.data(), &[0.3, -0.7, 0.3, -0.7]);
}

#[test]
fn jvae_zero_decoder_returns_bias() {
    let mut m = Model::new(ModelConfig::jvae(3, 32), 1).unwrap();
    assert_eq!(m.config.latent(), 16);
    let w = m.params.id("dec_out.w").unwrap();
    m.params.get_mut(w).value.data_mut().fill(0.0);
    let bias = m.params.get(m.params.id("dec_out.b").unwrap()).value.clone();
    let x = input(&m, 3, 2);
    let mut tape = Tape::new();
    let f = m.forward(&mut tape, &x, Mode::Eval, None).unwrap();
    let j = f.jvae.unwrap();
    let xh = tape.value(j.x_hat);
    assert_eq!(xh.shape(), &[3, FEATURE_DIM]);
    for row in xh.data().chunks(FEATURE_DIM) {
        assert_eq!(row, bias.data());
    }
    let p = tape.value(j.y_prob);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    // without noise the latent is the posterior mean
    assert_eq!(tape.value(j.z), tape.value(j.mu));
}

#[test]
fn arch_variant_mismatch_rejected() {
    let cfg = ModelConfig { variant: LstmVariant::Bidir, ..ModelConfig::cnn(2, 8) };
    assert!(matches!(Model::new(cfg, 0), Err(ModelError::BadVariant { .. })));
    let cfg = ModelConfig { input_dim: 190, ..ModelConfig::cnn(2, 8) };
    assert!(matches!(Model::new(cfg, 0), Err(ModelError::BadShape(_))));
}

#[test]
fn wrong_input_shape_rejected() {
    let m = Model::new(ModelConfig::mlp(1, 4), 0).unwrap();
    let mut tape = Tape::new();
    let bad = Tensor::zeros(&[2, 10]);
    assert!(m.forward(&mut tape, &bad, Mode::Eval, None).is_err());
}

/// The published architecture grid: every distinct layer, width and sequence setting.
#[test]
fn table_grid_builds_and_runs() {
    let mut cfgs = Vec::new();
    for (layers, hidden, seq) in [
        (1, 48, 30),
        (1, 64, 30),
        (1, 64, 40),
        (1, 48, 40),
        (1, 128, 30),
        (2, 48, 30),
        (2, 64, 30),
        (1, 48, 20),
        (1, 48, 50),
        (1, 32, 30),
        (1, 128, 40),
    ] {
        cfgs.push(ModelConfig::lstm(LstmVariant::Uni, layers, hidden, seq));
    }
    cfgs.push(ModelConfig::lstm(LstmVariant::SeqToConcat, 1, 48, 30));
    cfgs.push(ModelConfig::lstm(LstmVariant::SeqToLast1, 1, 48, 30));
    cfgs.push(ModelConfig::lstm(LstmVariant::Bidir, 1, 48, 40));
    cfgs.push(ModelConfig::lstm(LstmVariant::Bidir, 1, 48, 30));
    cfgs.push(ModelConfig { out_dim: 1, ..ModelConfig::lstm(LstmVariant::Uni, 1, 32, 30) });
    cfgs.push(ModelConfig::resnet(18));
    cfgs.push(ModelConfig::resnet(34));
    cfgs.push(ModelConfig::cnn(4, 64));
    cfgs.push(ModelConfig::cnn(2, 128));
    cfgs.push(ModelConfig::jvae(3, 32));
    cfgs.push(ModelConfig::jvae(3, 48));
    for cfg in cfgs {
        let m = Model::new(cfg.clone(), 3).unwrap();
        let out = run(&m, &input(&m, 2, 1));
        let expect: Vec<usize> = match (cfg.arch, cfg.per_frame()) {
            (Arch::Lstm, true) => vec![2, cfg.seq_len, cfg.out_dim],
            _ => vec![2, cfg.out_dim],
        };
        assert_eq!(out.shape(), expect.as_slice(), "{cfg:?}");
        assert!(out.is_finite());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [ModelConfig::lstm(LstmVariant::Bidir, 2, 6, 4), ModelConfig::cnn(3, 5), ModelConfig::jvae(2, 7)] {
        let mut m = Model::new(cfg, 11).unwrap();
        if !m.bn_running.is_empty() {
            m.bn_running[0].mean[1] = 0.1 + 0.2;
        }
        let meta = CheckpointMeta { fold: Some(3), epoch: Some(7), val_auc: Some(0.8125), ..Default::default() };
        let p = dir.path().join("m.json");
        save_checkpoint(&p, &m, &meta).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back.meta, meta);
        for (a, b) in m.params.iter().zip(back.model.params.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.model.bn_running, m.bn_running);
    }
}

#[test]
fn checkpoint_rejects_corruption_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let m = Model::new(ModelConfig::mlp(1, 4), 1).unwrap();
    let p = dir.path().join("m.json");
    save_checkpoint(&p, &m, &CheckpointMeta::default()).unwrap();
    assert!(matches!(load_checkpoint(&p, Some(Arch::Lstm)), Err(ModelError::VersionMismatch(_))));
    assert!(load_checkpoint(&p, Some(Arch::Mlp)).is_ok());

    let text = std::fs::read_to_string(&p).unwrap();
    std::fs::write(&p, &text[..text.len() / 2]).unwrap();
    assert!(matches!(read_checkpoint(&p), Err(ModelError::Corrupt(_))));

    std::fs::write(&p, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    assert!(matches!(read_checkpoint(&p), Err(ModelError::VersionMismatch(_))));

    // flip one hex digit into a non-hex character
    let i = text.find("\"data\": \"").unwrap() + 9;
    let mut bad = text.clone();
    bad.replace_range(i..i + 1, "g");
    std::fs::write(&p, bad).unwrap();
    assert!(matches!(read_checkpoint(&p), Err(ModelError::Corrupt(_))));
}

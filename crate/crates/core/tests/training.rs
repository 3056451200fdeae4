use coughscreen_core::autodiff::{ParamStore, Tape, Tensor};
use coughscreen_core::features::{compute_global_mean, FeatureMatrix, NormMode, FEATURE_DIM};
use coughscreen_core::losses::{weighted_ce, JvaeLossWeights};
use coughscreen_core::models::{output_rows, LstmVariant, Mode, Model, ModelConfig};
use coughscreen_core::training::{
    auroc_pairs, check_leakage, run_folds, select_best, train_auroc, train_ce, train_jvae, AdamW, DatasetClip,
    FoldResult, FoldSpec, LabeledClip, LossKind, TrainConfig, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian frames; positives are shifted by `sep` in the first eight
/// columns.
fn clip(rng: &mut ChaCha8Rng, id: &str, label: u8, frames: usize, sep: f64) -> FeatureMatrix {
    let data = (0..frames * FEATURE_DIM)
        .map(|i| {
            let noise: f64 = rng.sample(StandardNormal);
            let shift = if label == 1 && i % FEATURE_DIM < 8 { sep } else { 0.0 };
            0.5 * noise + shift
        })
        .collect();
    FeatureMatrix::new(id, data).unwrap()
}

fn dataset(seed: u64, n_neg: usize, n_pos: usize, frames: usize, sep: f64) -> Vec<LabeledClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_neg + n_pos)
        .map(|i| {
            let label = (i >= n_neg) as u8;
            LabeledClip {
                features: clip(&mut rng, &format!("s{seed}c{i}"), label, frames, sep),
                label,
            }
        })
        .collect()
}

fn small_lstm() -> ModelConfig {
    let mut c = ModelConfig::lstm(LstmVariant::Uni, 1, 8, 6);
    c.context_len = 3;
    c
}

fn cfg(loss: LossKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        loss,
        epochs,
        learning_rate: 1e-2,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_bit_identical() {
    let train = dataset(1, 6, 3, 8, 1.0);
    let val = dataset(2, 3, 2, 8, 1.0);
    for mc in [ModelConfig::mlp(1, 6), small_lstm(), ModelConfig::cnn(1, 4)] {
        let model = Model::new(mc, 4).unwrap();
        let c = TrainConfig {
            learning_rate: 0.0,
            ..cfg(LossKind::Ce, 1)
        };
        let r = train_ce(model.clone(), &train, &val, &c, 1).unwrap();
        assert_eq!(r.model.params, model.params);
    }
}

#[test]
fn decoupled_decay_with_zero_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![3], vec![1.5, -0.25, 3.0]).unwrap());
    let mut opt = AdamW::new(0.01, 1e-3);
    let mut want = store.get(id).value.data().to_vec();
    for _ in 0..25 {
        opt.step(&mut store);
        want.iter_mut().for_each(|w| *w *= 1.0 - 0.01 * 1e-3);
        assert_eq!(store.get(id).value.data(), want.as_slice());
    }
}

#[test]
fn separable_ce_reaches_perfect_auc() {
    let train = dataset(3, 20, 6, 12, 1.0);
    let val = dataset(4, 10, 5, 12, 1.0);
    let model = Model::new(ModelConfig::mlp(1, 8), 2).unwrap();
    let c = TrainConfig { wt_pos: 2.0, ..cfg(LossKind::Ce, 20) };
    let r = train_ce(model, &train, &val, &c, 1).unwrap();
    assert_eq!(r.best_val_auc, 1.0, "{:?}", r.history);
    assert_eq!(r.history.len(), 20);

    let model = Model::new(small_lstm(), 2).unwrap();
    let r = train_ce(model, &train, &val, &c, 1).unwrap();
    assert_eq!(r.best_val_auc, 1.0, "{:?}", r.history);
}

#[test]
fn best_epoch_weights_are_kept() {
    let train = dataset(3, 8, 4, 8, 0.3);
    let val = dataset(4, 6, 3, 8, 0.3);
    let r = train_ce(Model::new(ModelConfig::mlp(1, 6), 2).unwrap(), &train, &val, &cfg(LossKind::Ce, 6), 1).unwrap();
    let best = r.history.iter().map(|h| h.val_auc).fold(f64::MIN, f64::max);
    assert_eq!(r.best_val_auc, best);
    let first = r.history.iter().find(|h| h.val_auc == best).unwrap();
    assert_eq!(r.best_epoch, first.epoch);
    let auc = coughscreen_core::training::validation_auc(&r.model, &val).unwrap();
    assert_eq!(auc, best);
}

#[test]
fn auroc_epoch_pairs_every_negative_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = auroc_pairs(4, 3, &mut rng);
    assert_eq!(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(pairs.iter().all(|p| p.1 < 3));

    let train = dataset(5, 4, 2, 8, 1.0);
    let val = dataset(6, 3, 2, 8, 1.0);
    let mut mc = ModelConfig::mlp(1, 6);
    mc.out_dim = 1;
    let r = train_auroc(Model::new(mc, 1).unwrap(), &train, &val, &cfg(LossKind::Auroc, 3), 1).unwrap();
    assert!(r.history.iter().all(|h| h.steps == 4));
}

#[test]
fn auroc_training_is_deterministic_and_separates() {
    let train = dataset(7, 16, 5, 10, 1.0);
    let val = dataset(8, 10, 5, 10, 1.0);
    let mut mc = small_lstm();
    mc.out_dim = 1;
    let c = cfg(LossKind::Auroc, 20);
    let a = train_auroc(Model::new(mc.clone(), 3).unwrap(), &train, &val, &c, 1).unwrap();
    let b = train_auroc(Model::new(mc, 3).unwrap(), &train, &val, &c, 1).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.same_outcome(y)));
    assert!(a.best_val_auc >= 0.95, "{:?}", a.history);
}

#[test]
fn auroc_rejects_single_class_training_sets() {
    let mut mc = ModelConfig::mlp(1, 4);
    mc.out_dim = 1;
    let model = Model::new(mc, 1).unwrap();
    let neg = dataset(1, 3, 0, 4, 1.0);
    let pos: Vec<LabeledClip> = dataset(1, 0, 3, 4, 1.0);
    let val = dataset(2, 2, 2, 4, 1.0);
    let c = cfg(LossKind::Auroc, 1);
    assert!(matches!(train_auroc(model.clone(), &neg, &val, &c, 1), Err(TrainError::NoPositives)));
    assert!(matches!(train_auroc(model, &pos, &val, &c, 1), Err(TrainError::NoNegatives)));
}

#[test]
fn jvae_reconstruction_improves() {
    let train = dataset(9, 12, 4, 10, 1.0);
    let val = dataset(10, 6, 3, 10, 1.0);
    let r = train_jvae(Model::new(ModelConfig::jvae(1, 16), 5).unwrap(), &train, &val, &cfg(LossKind::Jvae, 5), 1).unwrap();
    let mse: Vec<f64> = r.history.iter().map(|h| h.recon_mse.unwrap()).collect();
    assert!(mse[4] < mse[0], "{mse:?}");
}

#[test]
fn jvae_without_classification_weight_freezes_classifier() {
    let train = dataset(9, 6, 2, 6, 1.0);
    let val = dataset(10, 3, 2, 6, 1.0);
    let model = Model::new(ModelConfig::jvae(1, 8), 5).unwrap();
    let c = TrainConfig {
        jvae_weights: JvaeLossWeights {
            lambda2: 0.0,
            ..JvaeLossWeights::default()
        },
        ..cfg(LossKind::Jvae, 2)
    };
    let r = train_jvae(model.clone(), &train, &val, &c, 1).unwrap();
    for p in model.params.iter() {
        let after = &r.model.params.get(r.model.params.id(&p.name).unwrap()).value;
        if p.name.starts_with("cls_") {
            assert_eq!(after, &p.value, "{}", p.name);
        } else if p.name.starts_with("enc") {
            assert_ne!(after, &p.value, "{}", p.name);
        }
    }
}

#[test]
fn adam_step_matches_finite_difference_step() {
    let mut mc = ModelConfig::mlp(2, 5);
    mc.input_dim = 7;
    let model = Model::new(mc, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[6, 7], |_| rng.random_range(-1.0..1.0));
    let labels = [0u8, 1, 1, 0, 1, 0];
    let loss = |store: &ParamStore, tape: &mut Tape| {
        let fwd = model.forward_with(tape, store, &x, Mode::Train, None).unwrap();
        let rows = output_rows(tape, fwd.logits).unwrap();
        weighted_ce(tape, rows, &labels, 2.0).unwrap()
    };

    let mut analytic = model.params.clone();
    let mut tape = Tape::new();
    let l = loss(&analytic, &mut tape);
    tape.backward(l, &mut analytic).unwrap();

    let mut numeric = model.params.clone();
    let h = 1e-5;
    let ids: Vec<_> = numeric.ids().collect();
    for id in ids {
        for j in 0..numeric.get(id).value.numel() {
            let mut probe = model.params.clone();
            let orig = probe.get(id).value.data()[j];
            let mut eval = |v: f64| {
                probe.get_mut(id).value.data_mut()[j] = v;
                let mut t = Tape::new();
                let l = loss(&probe, &mut t);
                t.value(l).item()
            };
            let g = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            numeric.get_mut(id).grad.data_mut()[j] = g;
        }
    }

    let (mut oa, mut on) = (AdamW::new(1e-3, 1e-3), AdamW::new(1e-3, 1e-3));
    oa.step(&mut analytic);
    on.step(&mut numeric);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ((a, n), p) in analytic.iter().zip(numeric.iter()).zip(model.params.iter()) {
        for ((va, vn), v0) in a.value.data().iter().zip(n.value.data()).zip(p.value.data()) {
            worst = worst.max((va - vn).abs());
            scale = scale.max((va - v0).abs());
        }
    }
    assert!(worst / scale < 1e-3, "{worst} / {scale}");
}

fn dataset_clips(seed: u64, n_neg: usize, n_pos: usize) -> Vec<DatasetClip> {
    dataset(seed, n_neg, n_pos, 8, 1.0)
        .into_iter()
        .map(|c| DatasetClip {
            features: c.features,
            label: c.label,
            sources: Vec::new(),
        })
        .collect()
}

fn five_folds(data: &[DatasetClip]) -> Vec<FoldSpec> {
    (1..=5)
        .map(|k| {
            let (val, train): (Vec<_>, Vec<_>) = data.iter().enumerate().partition(|(i, _)| i % 5 + 1 == k);
            FoldSpec {
                fold_id: k,
                train_ids: train.into_iter().map(|(_, c)| c.id().to_string()).collect(),
                val_ids: val.into_iter().map(|(_, c)| c.id().to_string()).collect(),
            }
        })
        .collect()
}

fn fake_result(fold_id: usize, auc: f64) -> FoldResult {
    FoldResult {
        fold_id,
        model: Model::new(ModelConfig::mlp(1, 2), 0).unwrap(),
        history: Vec::new(),
        best_epoch: 1,
        best_val_auc: auc,
        loss: LossKind::Ce,
        norm_mode: NormMode::UttWise,
        norm_stats: None,
    }
}

#[test]
fn best_fold_selection() {
    let rs: Vec<FoldResult> = [0.70, 0.79, 0.75, 0.71, 0.73]
        .iter()
        .enumerate()
        .map(|(i, &a)| fake_result(i + 1, a))
        .collect();
    assert_eq!(select_best(&rs).unwrap().fold_id, 2);
    let tie = vec![fake_result(2, 0.75), fake_result(1, 0.75)];
    assert_eq!(select_best(&tie).unwrap().fold_id, 1);
    assert!(select_best(&[]).is_none());
}

#[test]
fn injected_cross_fold_clip_is_leakage() {
    let mut data = dataset_clips(12, 10, 5);
    let mut folds = five_folds(&data);
    let victim = folds[0].val_ids[0].clone();
    let mut aug = data[1].clone();
    aug.features.clip_id = format!("{victim}__si0");
    aug.sources = vec![victim.clone()];
    folds[0].train_ids.push(aug.id().to_string());
    data.push(aug);
    let err = check_leakage(&folds[0], &data).unwrap_err();
    assert!(matches!(err, TrainError::LeakageDetected { fold: 1, ref source_id, .. } if *source_id == victim));
    let r = run_folds(&data, &folds, &ModelConfig::mlp(1, 4), &cfg(LossKind::Ce, 1));
    assert!(matches!(r, Err(TrainError::LeakageDetected { .. })));
    assert!(check_leakage(&folds[1], &data).is_ok());
}

#[test]
fn folds_use_training_split_statistics_and_are_deterministic() {
    let data = dataset_clips(13, 20, 10);
    let folds = five_folds(&data);
    let c = TrainConfig {
        norm_mode: NormMode::Global,
        ..cfg(LossKind::Ce, 3)
    };
    let mc = ModelConfig::mlp(1, 6);
    let a = run_folds(&data, &folds, &mc, &c).unwrap();
    let b = run_folds(&data, &folds, &mc, &c).unwrap();
    let all = compute_global_mean(data.iter().map(|d| &d.features)).unwrap();
    for ((ra, rb), spec) in a.iter().zip(&b).zip(&folds) {
        assert_eq!(ra.fold_id, spec.fold_id);
        assert_eq!(ra.model, rb.model);
        assert!(ra.history.iter().zip(&rb.history).all(|(x, y)| x.same_outcome(y)));
        let train = data.iter().filter(|d| spec.train_ids.iter().any(|t| t == d.id()));
        let want = compute_global_mean(train.map(|d| &d.features)).unwrap();
        let got = ra.norm_stats.as_ref().unwrap();
        assert_eq!(got.n_frames_seen, want.n_frames_seen);
        assert!(got.mean.iter().zip(&want.mean).all(|(g, w)| (g - w).abs() <= 1e-12));
        assert_ne!(got.mean, all.mean);
    }
    // fold seeds differ, so the folds do not share an initialization
    assert_ne!(a[0].history[0].train_loss, a[1].history[0].train_loss);
}

#[test]
fn bad_folds_rejected() {
    let data = dataset_clips(14, 5, 5);
    let mc = ModelConfig::mlp(1, 4);
    let c = cfg(LossKind::Ce, 1);
    assert!(matches!(run_folds(&data, &[], &mc, &c), Err(TrainError::BadFold(_))));
    let mut f = five_folds(&data);
    let dup = f[0].val_ids[0].clone();
    f[0].train_ids.push(dup);
    assert!(matches!(run_folds(&data, &f[..1], &mc, &c), Err(TrainError::BadFold(_))));
    let mut f = five_folds(&data);
    f[0].train_ids.push("nope".into());
    assert!(matches!(run_folds(&data, &f[..1], &mc, &c), Err(TrainError::BadFold(_))));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use coughscreen_cli::commands::{
    augment, ensemble_cmd, evaluate_cmd, feature_path, featurize, read_scores, train, AugmentArgs, EnsembleArgs,
    EvaluateArgs, FeaturizeArgs, TrainArgs,
};
use coughscreen_cli::manifest::read_provenance;
use coughscreen_cli::synth::synthesize;
use coughscreen_cli::{CliError, Fold, Manifest, ManifestRow, PipelineConfig};
use coughscreen_core::audio::{read_wav, write_wav_pcm16, AudioClip};
use coughscreen_core::augment::{AugmentError, AugmentMethod};
use coughscreen_core::dsp::fft_real;
use proptest::prelude::*;

const QUICK: &str = r#"{"model": {"arch": "mlp", "layers": 1, "hidden_dim": 8}, "train": {"epochs": 2}}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coughscreen"))
}

fn featurize_args(manifest: PathBuf) -> FeaturizeArgs {
    FeaturizeArgs {
        manifest,
        config: None,
        out: None,
        seed: None,
        strict: false,
    }
}

fn augment_args(manifest: PathBuf, method: AugmentMethod) -> AugmentArgs {
    AugmentArgs {
        manifest,
        method,
        config: None,
        out: None,
        seed: None,
        noise_dir: None,
        synthetic_noise: false,
    }
}

fn quick_config(dir: &Path) -> PathBuf {
    let p = dir.join("quick.json");
    fs::write(&p, QUICK).unwrap();
    p
}

fn centroid(clip: &AudioClip) -> f64 {
    let n = clip.len().next_power_of_two();
    let spec = fft_real(&clip.samples, n).unwrap();
    let df = clip.sample_rate_hz as f64 / n as f64;
    let mags = spec.magnitudes();
    let num: f64 = mags.iter().enumerate().map(|(k, m)| k as f64 * df * m).sum();
    num / mags.iter().sum::<f64>()
}

#[test]
fn synth_counts_stratification_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synthesize(a.path(), 160, 10, 3).unwrap();
    synthesize(b.path(), 160, 10, 3).unwrap();
    assert_eq!(m.rows.len(), 170);
    for k in 1..=5 {
        let neg = m.rows.iter().filter(|r| r.fold == Fold::K(k) && r.label == 0).count();
        let pos = m.rows.iter().filter(|r| r.fold == Fold::K(k) && r.label == 1).count();
        assert_eq!((neg, pos), (32, 2), "fold {k}");
    }
    for r in &m.rows {
        let wa = fs::read(a.path().join(&r.path)).unwrap();
        let wb = fs::read(b.path().join(&r.path)).unwrap();
        assert_eq!(wa, wb, "{}", r.clip_id);
    }
    assert_eq!(
        fs::read(a.path().join("manifest.csv")).unwrap(),
        fs::read(b.path().join("manifest.csv")).unwrap()
    );
    assert!(synthesize(a.path(), 4, 10, 3).is_err());
}

#[test]
fn synth_negative_class_has_higher_centroid() {
    let d = tempfile::tempdir().unwrap();
    let m = synthesize(d.path(), 20, 20, 8).unwrap();
    let mean = |label: u8| {
        let c: Vec<f64> = m
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| centroid(&read_wav(&m.resolve(r)).unwrap()))
            .collect();
        c.iter().sum::<f64>() / c.len() as f64
    };
    let (c0, c1) = (mean(0), mean(1));
    assert!(c0 > c1, "class 0 centroid {c0} vs class 1 {c1}");
}

#[test]
fn featurize_writes_caches_stats_and_skips_silence() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    fs::create_dir_all(root.join("a")).unwrap();
    let tone = |f: f64| {
        AudioClip::new(
            "x",
            22050,
            (0..11025).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 22050.0).sin() * 0.5).collect(),
        )
    };
    write_wav_pcm16(&root.join("a/one.wav"), &tone(440.0)).unwrap();
    write_wav_pcm16(&root.join("a/two.wav"), &tone(1500.0)).unwrap();
    write_wav_pcm16(&root.join("a/three.wav"), &tone(3000.0)).unwrap();
    write_wav_pcm16(&root.join("a/quiet.wav"), &AudioClip::new("q", 16000, vec![0.0; 8000])).unwrap();
    let rows = "clip_id,path,label,fold\none,a/one.wav,0,1\ntwo,a/two.wav,1,2\nthree,a/three.wav,0,3\n";
    fs::write(root.join("m.csv"), rows).unwrap();
    let s = featurize(&featurize_args(root.join("m.csv"))).unwrap();
    assert_eq!(s.written.len(), 3);
    assert_eq!(s.stats_files.len(), 3);
    for id in ["one", "two", "three"] {
        assert!(feature_path(&root.join("features"), id).exists());
    }
    let first: Vec<Vec<u8>> = s.written.iter().map(|id| fs::read(feature_path(&s.out_dir, id)).unwrap()).collect();
    let again = featurize(&featurize_args(root.join("m.csv"))).unwrap();
    let second: Vec<Vec<u8>> = again.written.iter().map(|id| fs::read(feature_path(&again.out_dir, id)).unwrap()).collect();
    assert_eq!(first, second);

    fs::write(root.join("q.csv"), format!("{rows}quiet,a/quiet.wav,1,4\n")).unwrap();
    let s = featurize(&featurize_args(root.join("q.csv"))).unwrap();
    assert_eq!(s.skipped.len(), 1);
    assert_eq!(s.skipped[0].clip_id, "quiet");
    assert!(s.skipped[0].reason.contains("nothing left after activity detection"));
    let strict = FeaturizeArgs {
        strict: true,
        ..featurize_args(root.join("q.csv"))
    };
    let e = featurize(&strict).unwrap_err();
    assert!(matches!(e, CliError::ClipsFailed { failed: 1, total: 4 }));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn augment_methods_counts_and_tags() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let m = synthesize(root, 10, 10, 2).unwrap();

    let s = augment(&augment_args(root.join("manifest.csv"), AugmentMethod::Spectrum)).unwrap();
    assert_eq!(s.new_rows, 50);
    let ext = Manifest::read(&s.manifest).unwrap();
    assert_eq!(ext.rows.len(), 70);
    let prov = read_provenance(&s.manifest).unwrap();
    assert_eq!(prov.len(), 50);
    for p in &prov {
        let row = ext.get(&p.id).unwrap();
        let anchor = m.get(&p.anchor_id).unwrap();
        assert_eq!((row.label, row.fold), (1, anchor.fold));
        assert!(ext.resolve(row).exists());
    }

    let noise = augment(&AugmentArgs {
        synthetic_noise: true,
        ..augment_args(s.manifest.clone(), AugmentMethod::Noise)
    })
    .unwrap();
    assert_eq!(noise.new_rows, 70);
    let prov = read_provenance(&noise.manifest).unwrap();
    assert_eq!(prov.len(), 120);

    let vt = augment(&augment_args(root.join("manifest.csv"), AugmentMethod::Vtlp)).unwrap();
    assert_eq!(vt.new_rows, 20);
    for p in read_provenance(&vt.manifest).unwrap() {
        let a = p.alpha.unwrap();
        assert!((0.85..=1.15).contains(&a));
    }
    let f = featurize(&featurize_args(vt.manifest.clone())).unwrap();
    assert_eq!(f.written.len(), 40);

    let e = augment(&augment_args(root.join("manifest.csv"), AugmentMethod::Noise)).unwrap_err();
    assert!(matches!(e, CliError::MissingNoiseDir));
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn spectrum_needs_enough_training_positives() {
    let d = tempfile::tempdir().unwrap();
    synthesize(d.path(), 10, 6, 2).unwrap();
    let e = augment(&augment_args(d.path().join("manifest.csv"), AugmentMethod::Spectrum)).unwrap_err();
    assert!(matches!(e, CliError::Augment(AugmentError::PoolTooSmall { needed: 6, .. })), "{e}");
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn train_evaluate_ensemble_round() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    synthesize(root, 25, 10, 6).unwrap();
    let cfg = quick_config(root);
    featurize(&featurize_args(root.join("manifest.csv"))).unwrap();
    let args = TrainArgs {
        manifest: root.join("manifest.csv"),
        features: None,
        config: Some(cfg.clone()),
        out: Some(root.join("r1")),
        seed: Some(3),
        folds: Some(vec![1]),
    };
    let one = train(&args).unwrap();
    assert_eq!(one.selection.selected_fold, 1);
    assert_eq!(one.selection.folds.len(), 1);
    for f in ["fold1.ckpt.json", "best.ckpt.json", "epochs.jsonl", "selection.json"] {
        assert!(root.join("r1").join(f).exists(), "{f}");
    }
    let lines = fs::read_to_string(root.join("r1/epochs.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let again = train(&TrainArgs {
        out: Some(root.join("r2")),
        ..args.clone()
    })
    .unwrap();
    assert_eq!(one.selection, again.selection);
    assert_eq!(
        fs::read(root.join("r1/selection.json")).unwrap(),
        fs::read(root.join("r2/selection.json")).unwrap()
    );

    let all = train(&TrainArgs {
        out: Some(root.join("r3")),
        folds: None,
        ..args.clone()
    })
    .unwrap();
    assert_eq!(all.selection.folds.len(), 5);
    let best = all
        .selection
        .folds
        .iter()
        .fold(None::<&coughscreen_cli::commands::FoldSummary>, |b, f| match b {
            Some(b) if b.best_val_auc >= f.best_val_auc => Some(b),
            _ => Some(f),
        })
        .unwrap();
    assert_eq!(all.selection.selected_fold, best.fold);
    assert_eq!(all.selection.validation.eval.auc, best.best_val_auc);

    let ck = root.join("r3/best.ckpt.json");
    let single = evaluate_cmd(&EvaluateArgs {
        checkpoints: vec![ck.clone()],
        manifest: root.join("manifest.csv"),
        features: None,
        config: None,
        out: root.join("ev1"),
        folds: Some(vec![Fold::K(all.selection.selected_fold)]),
    })
    .unwrap();
    assert_eq!(single.report.eval.auc, all.selection.validation.eval.auc);
    let pair = evaluate_cmd(&EvaluateArgs {
        checkpoints: vec![ck.clone(), ck.clone()],
        manifest: root.join("manifest.csv"),
        features: None,
        config: None,
        out: root.join("ev2"),
        folds: Some(vec![Fold::K(all.selection.selected_fold)]),
    })
    .unwrap();
    assert_eq!(single.report, pair.report);

    let report = fs::read_to_string(root.join("ev1/report.json")).unwrap();
    assert!(report.contains("\"auc\"") && report.contains("\"specificity_at_80_sens\""));
    assert!(fs::read_to_string(root.join("ev1/roc.csv")).unwrap().starts_with("fpr,tpr,threshold\n0,0,inf\n"));

    let scores = read_scores(&root.join("ev1/scores.jsonl")).unwrap();
    assert_eq!(scores, single.scores);
    let ens = ensemble_cmd(&EnsembleArgs {
        scores: vec![root.join("ev1/scores.jsonl"), root.join("ev2/scores.jsonl")],
        config: None,
        out: root.join("ens"),
    })
    .unwrap();
    assert_eq!(ens.report, single.report);
}

#[test]
fn evaluate_rejects_single_class_subset() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    synthesize(root, 10, 5, 1).unwrap();
    featurize(&featurize_args(root.join("manifest.csv"))).unwrap();
    // a manifest holding only negatives
    let m = Manifest::read(&root.join("manifest.csv")).unwrap();
    let neg = Manifest {
        rows: m.rows.iter().filter(|r| r.label == 0).cloned().collect(),
        base_dir: root.to_path_buf(),
    };
    fs::write(root.join("neg.csv"), neg.to_csv()).unwrap();
    let cfg = quick_config(root);
    train(&TrainArgs {
        manifest: root.join("manifest.csv"),
        features: None,
        config: Some(cfg),
        out: Some(root.join("r")),
        seed: None,
        folds: Some(vec![1]),
    })
    .unwrap();
    let e = evaluate_cmd(&EvaluateArgs {
        checkpoints: vec![root.join("r/best.ckpt.json")],
        manifest: root.join("neg.csv"),
        features: None,
        config: None,
        out: root.join("ev"),
        folds: None,
    })
    .unwrap_err();
    assert_eq!(e.exit_code(), 1, "{e}");
}

#[test]
fn config_rejects_unknown_and_invalid_fields() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("c.json");
    fs::write(&p, r#"{"train": {"epochs": 0}}"#).unwrap();
    assert_eq!(PipelineConfig::load(Some(&p), None).unwrap_err().exit_code(), 1);
    fs::write(&p, r#"{"trian": {}}"#).unwrap();
    assert_eq!(PipelineConfig::load(Some(&p), None).unwrap_err().exit_code(), 1);
    let a = PipelineConfig::load(None, Some(1)).unwrap();
    let b = PipelineConfig::load(None, Some(2)).unwrap();
    assert_ne!(a.train.seed, b.train.seed);
    assert_ne!(a.augment.rng_seed, a.train.seed);
}

#[test]
fn binary_exit_codes_and_gradcheck_report() {
    let ok = bin().arg("gradcheck").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 11);
    for l in &lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(f.len(), 4, "{l}");
        assert!(f[2].parse::<f64>().is_ok());
        assert_eq!(f[3], "PASS");
    }
    let tight = bin().args(["gradcheck", "--tol", "1e-12"]).output().unwrap();
    assert_eq!(tight.status.code(), Some(2));
    assert!(String::from_utf8(tight.stdout).unwrap().contains("FAIL"));

    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let d = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["featurize", "--manifest"])
        .arg(d.path().join("nope.csv"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let synth = bin().args(["synth", "--n-neg", "5", "--n-pos", "5", "--out"]).arg(d.path()).output().unwrap();
    assert_eq!(synth.status.code(), Some(0));
    assert_eq!(Manifest::read(&d.path().join("manifest.csv")).unwrap().rows.len(), 10);
}

fn arb_row() -> impl Strategy<Value = ManifestRow> {
    (
        "[a-z][a-z0-9_]{0,8}",
        "[a-z0-9_/]{1,12}\\.wav",
        0u8..2,
        prop_oneof![(1usize..=5).prop_map(Fold::K), Just(Fold::Test)],
    )
        .prop_map(|(clip_id, path, label, fold)| ManifestRow {
            clip_id,
            path,
            label,
            fold,
        })
}

proptest! {
    #[test]
    fn manifest_round_trips(rows in prop::collection::vec(arb_row(), 0..20)) {
        let mut seen = std::collections::HashSet::new();
        let rows: Vec<ManifestRow> = rows.into_iter().filter(|r| seen.insert(r.clip_id.clone())).collect();
        let m = Manifest { rows, base_dir: PathBuf::from("/base") };
        let back = Manifest::parse(&m.to_csv(), Path::new("/base")).unwrap();
        prop_assert_eq!(back, m);
    }
}

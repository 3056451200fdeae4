//! The subcommands as library functions. Each takes its arguments as a
//! plain struct and returns a summary of what it wrote.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use coughscreen_core::audio::{
    detect_activity, peak_normalize, read_wav, resample, trim_to_activity, write_wav_pcm16, AudioClip, PIPELINE_RATE_HZ,
};
use coughscreen_core::augment::{
    augment_noise, augment_positives, augment_vtlp, synthetic_noise, AugmentMethod, NoiseKind, Provenance,
};
use coughscreen_core::diagnostics::{gradient_suite, SuiteEntry};
use coughscreen_core::eval::{
    ensemble, evaluate, roc_csv, score_utterance, specificity_at_sensitivity, EvalReport, ScoredUtterance,
};
use coughscreen_core::features::{
    assemble_features, compute_global_mean, read_feature_cache, write_feature_cache, FeatureMatrix, NormMode,
};
use coughscreen_core::models::{load_checkpoint, save_checkpoint};
use coughscreen_core::training::{run_folds, select_best, DatasetClip, EpochRecord, FoldResult};
use coughscreen_core::util::{derive_seed, write_atomic};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{fold_specs, lineage, provenance_jsonl, read_provenance, Fold, Manifest, ManifestRow};

const FEAT_EXT: &str = "feat";
/// Length of each built-in noise clip.
const SYNTHETIC_NOISE_S: usize = 2;

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| serde_json::to_string(&v).expect("serializable") + "\n")
        .collect()
}

fn is_feature_path(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == FEAT_EXT)
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{FEAT_EXT}"))
}

fn prov_index(prov: &[Provenance]) -> HashMap<&str, &Provenance> {
    prov.iter().map(|p| (p.id.as_str(), p)).collect()
}

/// Read, resample to the pipeline rate, trim to the active region and peak
/// normalize. The clip takes the manifest id.
pub fn condition_clip(path: &Path, id: &str, cfg: &PipelineConfig) -> Result<AudioClip, CliError> {
    let mut clip = read_wav(path)?;
    clip.id = id.to_string();
    let clip = resample(&clip, PIPELINE_RATE_HZ);
    let ranges = detect_activity(&clip, &cfg.activity)?;
    if ranges.is_empty() {
        return Err(CliError::EmptyAfterVad { clip_id: id.to_string() });
    }
    Ok(peak_normalize(&trim_to_activity(&clip, &ranges)))
}

fn row_features(manifest: &Manifest, row: &ManifestRow, cfg: &PipelineConfig) -> Result<FeatureMatrix, CliError> {
    let path = manifest.resolve(row);
    if is_feature_path(&path) {
        let mut m = read_feature_cache(&path)?;
        m.clip_id = row.clip_id.clone();
        return Ok(m);
    }
    let clip = condition_clip(&path, &row.clip_id, cfg)?;
    Ok(assemble_features(&clip, &cfg.features)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub clip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FeaturizeArgs {
    pub manifest: PathBuf,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct FeaturizeSummary {
    pub out_dir: PathBuf,
    pub written: Vec<String>,
    pub skipped: Vec<Skipped>,
    pub stats_files: Vec<PathBuf>,
}

/// Feature caches for every row plus global-mean statistics of each
/// fold's training split.
pub fn featurize(args: &FeaturizeArgs) -> Result<FeaturizeSummary, CliError> {
    let cfg = PipelineConfig::load(args.config.as_deref(), args.seed)?;
    let manifest = Manifest::read(&args.manifest)?;
    let prov = read_provenance(&args.manifest)?;
    let prov_map = prov_index(&prov);
    let out = args.out.clone().unwrap_or_else(|| manifest_dir(&args.manifest).join("features"));
    fs::create_dir_all(&out)?;

    let results: Vec<Result<FeatureMatrix, CliError>> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let m = row_features(&manifest, row, &cfg)?;
            write_feature_cache(&feature_path(&out, &row.clip_id), &m)?;
            Ok(m)
        })
        .collect();

    let mut feats: HashMap<String, FeatureMatrix> = HashMap::new();
    let mut skipped = Vec::new();
    let mut written = Vec::new();
    for (row, res) in manifest.rows.iter().zip(results) {
        match res {
            Ok(m) => {
                written.push(row.clip_id.clone());
                feats.insert(row.clip_id.clone(), m);
            }
            Err(e) => {
                warn!("skipping {}: {e}", row.clip_id);
                skipped.push(Skipped {
                    clip_id: row.clip_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    write_atomic(&out.join("skipped.jsonl"), jsonl(&skipped).as_bytes())?;
    if args.strict && !skipped.is_empty() {
        return Err(CliError::ClipsFailed {
            failed: skipped.len(),
            total: manifest.rows.len(),
        });
    }

    let available: HashSet<String> = feats.keys().cloned().collect();
    let specs = fold_specs(&manifest, &prov_map, &available, None, cfg.augment.noise_replaces_source)?;
    let mut stats_files = Vec::new();
    for spec in &specs {
        if spec.train_ids.is_empty() {
            continue;
        }
        let stats = compute_global_mean(spec.train_ids.iter().map(|id| &feats[id]))?;
        let path = out.join(format!("stats_fold{}.json", spec.fold_id));
        write_atomic(&path, &json_bytes(&stats))?;
        stats_files.push(path);
    }
    info!("featurized {} clips, skipped {}", written.len(), skipped.len());
    Ok(FeaturizeSummary {
        out_dir: out,
        written,
        skipped,
        stats_files,
    })
}

#[derive(Debug, Clone)]
pub struct AugmentArgs {
    pub manifest: PathBuf,
    pub method: AugmentMethod,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub noise_dir: Option<PathBuf>,
    pub synthetic_noise: bool,
}

#[derive(Debug, Clone)]
pub struct AugmentSummary {
    pub manifest: PathBuf,
    pub new_rows: usize,
}

fn method_name(m: AugmentMethod) -> &'static str {
    match m {
        AugmentMethod::Spectrum => "spectrum",
        AugmentMethod::Noise => "noise",
        AugmentMethod::Vtlp => "vtlp",
    }
}

fn load_noises(args: &AugmentArgs, cfg: &PipelineConfig) -> Result<Vec<AudioClip>, CliError> {
    let mut noises = Vec::new();
    if let Some(dir) = &args.noise_dir {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
        paths.sort();
        for p in paths {
            let mut clip = resample(&read_wav(&p)?, PIPELINE_RATE_HZ);
            clip.id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            noises.push(clip);
        }
    }
    if args.synthetic_noise {
        let len = SYNTHETIC_NOISE_S * PIPELINE_RATE_HZ as usize;
        for kind in NoiseKind::ALL {
            let seed = derive_seed(cfg.augment.rng_seed, &format!("noise/{}", kind.name()));
            let mut clip = synthetic_noise(kind, len, PIPELINE_RATE_HZ, seed);
            clip.id = format!("synthetic_{}", kind.name());
            noises.push(clip);
        }
    }
    if noises.is_empty() {
        return Err(CliError::MissingNoiseDir);
    }
    Ok(noises)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    Ok(std::path::absolute(p)?)
}

/// Augments the non-test clips and writes an extended manifest holding
/// the input rows plus one row per new clip. New rows carry their
/// anchor's label and fold.
pub fn augment(args: &AugmentArgs) -> Result<AugmentSummary, CliError> {
    if args.method == AugmentMethod::Noise && args.noise_dir.is_none() && !args.synthetic_noise {
        return Err(CliError::MissingNoiseDir);
    }
    let cfg = PipelineConfig::load(args.config.as_deref(), args.seed)?;
    let manifest = Manifest::read(&args.manifest)?;
    let mut prov = read_provenance(&args.manifest)?;
    let out = args.out.clone().unwrap_or_else(|| manifest_dir(&args.manifest).join("augmented"));
    let name = method_name(args.method);

    let prov_ids: HashSet<String> = prov.iter().map(|p| p.id.clone()).collect();
    let audio_rows: Vec<&ManifestRow> = manifest
        .rows
        .iter()
        .filter(|r| r.fold != Fold::Test && !is_feature_path(&manifest.resolve(r)))
        .collect();
    let targets: Vec<&ManifestRow> = match args.method {
        AugmentMethod::Spectrum => audio_rows
            .into_iter()
            .filter(|r| r.label == 1 && !prov_ids.contains(&r.clip_id))
            .collect(),
        _ => audio_rows,
    };
    if args.method == AugmentMethod::Spectrum {
        let needed = cfg.augment.k_neighbors + 1;
        for k in manifest.folds() {
            let found = targets.iter().filter(|r| r.fold != Fold::K(k)).count();
            if found < needed {
                return Err(coughscreen_core::augment::AugmentError::PoolTooSmall { needed, found }.into());
            }
        }
    }
    let clips: Vec<AudioClip> = targets
        .par_iter()
        .map(|r| condition_clip(&manifest.resolve(r), &r.clip_id, &cfg))
        .collect::<Result<_, _>>()?;

    let new_prov: Vec<Provenance> = match args.method {
        AugmentMethod::Spectrum | AugmentMethod::Noise => {
            let made = if args.method == AugmentMethod::Spectrum {
                augment_positives(&clips, &cfg.augment)?
            } else {
                augment_noise(&clips, &load_noises(args, &cfg)?, &cfg.augment)?
            };
            let dir = out.join("audio");
            fs::create_dir_all(&dir)?;
            made.par_iter()
                .try_for_each(|(clip, _)| write_wav_pcm16(&dir.join(format!("{}.wav", clip.id)), clip))?;
            made.into_iter().map(|(_, p)| p).collect()
        }
        AugmentMethod::Vtlp => {
            let made = augment_vtlp(&clips, &cfg.augment, &cfg.features)?;
            let dir = out.join("features");
            fs::create_dir_all(&dir)?;
            made.par_iter()
                .try_for_each(|(m, _)| write_feature_cache(&feature_path(&dir, &m.clip_id), m))?;
            made.into_iter().map(|(_, p)| p).collect()
        }
    };

    let mut rows = Vec::with_capacity(manifest.rows.len() + new_prov.len());
    for r in &manifest.rows {
        rows.push(ManifestRow {
            path: absolute(&manifest.resolve(r))?.display().to_string(),
            ..r.clone()
        });
    }
    for p in &new_prov {
        let anchor = manifest.get(&p.anchor_id).expect("anchor comes from the manifest");
        let file = match args.method {
            AugmentMethod::Vtlp => feature_path(&out.join("features"), &p.id),
            _ => out.join("audio").join(format!("{}.wav", p.id)),
        };
        rows.push(ManifestRow {
            clip_id: p.id.clone(),
            path: absolute(&file)?.display().to_string(),
            label: anchor.label,
            fold: anchor.fold,
        });
    }
    let extended = Manifest {
        rows,
        base_dir: out.clone(),
    };
    extended.validate().map_err(|msg| CliError::Manifest {
        path: args.manifest.display().to_string(),
        msg,
    })?;
    let n_new = new_prov.len();
    prov.extend(new_prov);
    let path = out.join(format!("augmented_{name}.csv"));
    write_atomic(&path, extended.to_csv().as_bytes())?;
    write_atomic(&crate::manifest::provenance_path(&path), provenance_jsonl(&prov).as_bytes())?;
    info!("{name}: {n_new} new clips");
    Ok(AugmentSummary {
        manifest: path,
        new_rows: n_new,
    })
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub features: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// A report with the operating point at the configured sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub min_sensitivity: f64,
    pub specificity_at_min_sens: f64,
    pub threshold_at_min_sens: f64,
    #[serde(flatten)]
    pub eval: EvalReport,
}

impl Report {
    fn new(scored: &[ScoredUtterance], min_sensitivity: f64) -> Result<Self, CliError> {
        let eval = evaluate(scored)?;
        let (spec, thr) = specificity_at_sensitivity(scored, min_sensitivity)?;
        Ok(Self {
            min_sensitivity,
            specificity_at_min_sens: spec,
            threshold_at_min_sens: thr,
            eval,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected_fold: usize,
    pub folds: Vec<FoldSummary>,
    /// The selected model on its own validation fold.
    pub validation: Report,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub selection: Selection,
    pub results: Vec<FoldResult>,
}

fn score_clips(
    result_model: &coughscreen_core::models::Model,
    mode: NormMode,
    stats: Option<&coughscreen_core::features::NormalizationStats>,
    clips: &[(String, u8, FeatureMatrix)],
) -> Result<Vec<ScoredUtterance>, CliError> {
    clips
        .par_iter()
        .map(|(id, label, m)| {
            let s = score_utterance(result_model, m, mode, stats)?;
            Ok(ScoredUtterance::new(id.clone(), *label, s)?)
        })
        .collect()
}

/// Trains every requested fold, saves each fold's best checkpoint, and
/// copies the selected one to `best.ckpt.json`.
pub fn train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let cfg = PipelineConfig::load(args.config.as_deref(), args.seed)?;
    let manifest = Manifest::read(&args.manifest)?;
    let prov = read_provenance(&args.manifest)?;
    let prov_map = prov_index(&prov);
    let feat_dir = args.features.clone().unwrap_or_else(|| manifest_dir(&args.manifest).join("features"));
    let out = args.out.clone().unwrap_or_else(|| manifest_dir(&args.manifest).join("runs"));

    let mut available = HashSet::new();
    for r in manifest.rows.iter().filter(|r| r.fold != Fold::Test) {
        if feature_path(&feat_dir, &r.clip_id).exists() {
            available.insert(r.clip_id.clone());
        } else {
            warn!("no features for {}; left out", r.clip_id);
        }
    }
    let specs = fold_specs(
        &manifest,
        &prov_map,
        &available,
        args.folds.as_deref(),
        cfg.augment.noise_replaces_source,
    )?;
    let mut used: Vec<&ManifestRow> = manifest.rows.iter().filter(|r| available.contains(&r.clip_id)).collect();
    let needed: HashSet<&str> = specs
        .iter()
        .flat_map(|s| s.train_ids.iter().chain(&s.val_ids))
        .map(String::as_str)
        .collect();
    used.retain(|r| needed.contains(r.clip_id.as_str()));
    let dataset: Vec<DatasetClip> = used
        .par_iter()
        .map(|r| {
            let mut features = read_feature_cache(&feature_path(&feat_dir, &r.clip_id))?;
            features.clip_id = r.clip_id.clone();
            Ok(DatasetClip {
                features,
                label: r.label,
                sources: lineage(&r.clip_id, &prov_map),
            })
        })
        .collect::<Result<_, CliError>>()?;

    info!("training {} folds on {} clips", specs.len(), dataset.len());
    let results = run_folds(&dataset, &specs, &cfg.model, &cfg.train)?;
    fs::create_dir_all(&out)?;
    for r in &results {
        save_checkpoint(&out.join(format!("fold{}.ckpt.json", r.fold_id)), &r.model, &r.checkpoint_meta())?;
    }
    let records: Vec<&EpochRecord> = results.iter().flat_map(|r| &r.history).collect();
    write_atomic(&out.join("epochs.jsonl"), jsonl(records).as_bytes())?;

    let best = select_best(&results).expect("at least one fold");
    save_checkpoint(&out.join("best.ckpt.json"), &best.model, &best.checkpoint_meta())?;
    let spec = specs.iter().find(|s| s.fold_id == best.fold_id).expect("fold spec");
    let by_id: HashMap<&str, &DatasetClip> = dataset.iter().map(|c| (c.id(), c)).collect();
    let val: Vec<(String, u8, FeatureMatrix)> = spec
        .val_ids
        .iter()
        .map(|id| (id.clone(), by_id[id.as_str()].label, by_id[id.as_str()].features.clone()))
        .collect();
    let scored = score_clips(&best.model, best.norm_mode, best.norm_stats.as_ref(), &val)?;
    let selection = Selection {
        selected_fold: best.fold_id,
        folds: results
            .iter()
            .map(|r| FoldSummary {
                fold: r.fold_id,
                best_epoch: r.best_epoch,
                best_val_auc: r.best_val_auc,
            })
            .collect(),
        validation: Report::new(&scored, cfg.eval.min_sensitivity)?,
    };
    write_atomic(&out.join("selection.json"), &json_bytes(&selection))?;
    info!(
        "selected fold {} (val AUC {:.4})",
        selection.selected_fold, selection.validation.eval.auc
    );
    Ok(TrainSummary {
        out_dir: out,
        selection,
        results,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoints: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub features: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub folds: Option<Vec<Fold>>,
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub report: Report,
    pub scores: Vec<ScoredUtterance>,
}

fn write_eval_outputs(out: &Path, report: &Report, scores: &[ScoredUtterance]) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join("report.json"), &json_bytes(report))?;
    write_atomic(&out.join("roc.csv"), roc_csv(&report.eval.roc_points).as_bytes())?;
    write_atomic(&out.join("scores.jsonl"), jsonl(scores).as_bytes())?;
    Ok(())
}

/// Scores the original (non-augmented) clips of the chosen folds with one
/// checkpoint, or the mean of several.
pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<EvaluateSummary, CliError> {
    if args.checkpoints.is_empty() {
        return Err(CliError::Validation("at least one --checkpoint is required".into()));
    }
    let cfg = PipelineConfig::load(args.config.as_deref(), None)?;
    let manifest = Manifest::read(&args.manifest)?;
    let prov = read_provenance(&args.manifest)?;
    let prov_map = prov_index(&prov);
    let feat_dir = args.features.clone().unwrap_or_else(|| manifest_dir(&args.manifest).join("features"));
    let clips: Vec<(String, u8, FeatureMatrix)> = manifest
        .rows
        .iter()
        .filter(|r| !prov_map.contains_key(r.clip_id.as_str()))
        .filter(|r| args.folds.as_ref().is_none_or(|f| f.contains(&r.fold)))
        .map(|r| {
            let mut m = read_feature_cache(&feature_path(&feat_dir, &r.clip_id))?;
            m.clip_id = r.clip_id.clone();
            Ok((r.clip_id.clone(), r.label, m))
        })
        .collect::<Result<_, CliError>>()?;
    let mut sets = Vec::with_capacity(args.checkpoints.len());
    for path in &args.checkpoints {
        let ck = load_checkpoint(path, None)?;
        let (mode, stats) = match &ck.meta.norm {
            Some(n) => (n.mode, n.stats()?),
            None => (NormMode::UttWise, None),
        };
        sets.push(score_clips(&ck.model, mode, stats.as_ref(), &clips)?);
    }
    let scores = if sets.len() == 1 { sets.pop().expect("one set") } else { ensemble(&sets)? };
    let report = Report::new(&scores, cfg.eval.min_sensitivity)?;
    write_eval_outputs(&args.out, &report, &scores)?;
    Ok(EvaluateSummary { report, scores })
}

#[derive(Debug, Clone)]
pub struct EnsembleArgs {
    pub scores: Vec<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredUtterance>, CliError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let s: ScoredUtterance = serde_json::from_str(l).map_err(|e| CliError::Json {
                path: path.display().to_string(),
                source: e,
            })?;
            Ok(ScoredUtterance::new(s.clip_id, s.label, s.score)?)
        })
        .collect()
}

/// Averages per-clip scores from earlier `evaluate` runs.
pub fn ensemble_cmd(args: &EnsembleArgs) -> Result<EvaluateSummary, CliError> {
    if args.scores.is_empty() {
        return Err(CliError::Validation("at least one --scores file is required".into()));
    }
    let cfg = PipelineConfig::load(args.config.as_deref(), None)?;
    let sets: Vec<Vec<ScoredUtterance>> = args.scores.iter().map(|p| read_scores(p)).collect::<Result<_, _>>()?;
    let scores = ensemble(&sets)?;
    let report = Report::new(&scores, cfg.eval.min_sensitivity)?;
    write_eval_outputs(&args.out, &report, &scores)?;
    Ok(EvaluateSummary { report, scores })
}

pub const GRADCHECK_H: f64 = 1e-5;

/// Finite-difference check of every architecture/loss pair. Prints one
/// line per pair and fails if any exceeds `tol`.
pub fn gradcheck(tol: f64, seed: u64, out: Option<&Path>) -> Result<Vec<SuiteEntry>, CliError> {
    if !(tol > 0.0) {
        return Err(CliError::Validation("--tol must be positive".into()));
    }
    let entries = gradient_suite(seed, GRADCHECK_H, tol).map_err(|e| CliError::Train(e.into()))?;
    for e in &entries {
        println!(
            "{:<16} {:<12} {:.3e} {}",
            e.arch,
            e.loss,
            e.max_rel_error,
            if e.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(p) = out {
        write_atomic(p, &json_bytes(&entries))?;
    }
    let failed = entries.iter().filter(|e| !e.passed).count();
    if failed > 0 {
        return Err(CliError::GradCheckFailed(failed));
    }
    Ok(entries)
}

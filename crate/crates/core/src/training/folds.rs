use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::features::{compute_global_mean, normalize, FeatureMatrix, NormMode};
use crate::models::{Model, ModelConfig};
use crate::util::derive_seed;

use super::{train, FoldResult, LabeledClip, TrainConfig, TrainError};

/// A clip with raw (unnormalized) features. Augmented clips list the
/// clips their audio came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetClip {
    pub features: FeatureMatrix,
    pub label: u8,
    pub sources: Vec<String>,
}

impl DatasetClip {
    pub fn id(&self) -> &str {
        &self.features.clip_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Fails if any training clip was derived from a validation clip.
pub fn check_leakage(spec: &FoldSpec, dataset: &[DatasetClip]) -> Result<(), TrainError> {
    let val: HashSet<&str> = spec.val_ids.iter().map(String::as_str).collect();
    let by_id: HashMap<&str, &DatasetClip> = dataset.iter().map(|c| (c.id(), c)).collect();
    for id in &spec.train_ids {
        let Some(clip) = by_id.get(id.as_str()) else { continue };
        if let Some(src) = clip.sources.iter().find(|s| val.contains(s.as_str())) {
            return Err(TrainError::LeakageDetected {
                fold: spec.fold_id,
                clip_id: id.clone(),
                source_id: src.clone(),
            });
        }
    }
    Ok(())
}

fn resolve<'a>(ids: &[String], by_id: &HashMap<&str, &'a DatasetClip>) -> Result<Vec<&'a DatasetClip>, TrainError> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| TrainError::BadFold(format!("unknown clip {id}")))
        })
        .collect()
}

fn run_fold(
    spec: &FoldSpec,
    by_id: &HashMap<&str, &DatasetClip>,
    dataset: &[DatasetClip],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    if spec.train_ids.is_empty() || spec.val_ids.is_empty() {
        return Err(TrainError::BadFold(format!("fold {} has an empty split", spec.fold_id)));
    }
    let train_set: HashSet<&str> = spec.train_ids.iter().map(String::as_str).collect();
    if let Some(dup) = spec.val_ids.iter().find(|id| train_set.contains(id.as_str())) {
        return Err(TrainError::BadFold(format!("fold {}: {dup} is in both splits", spec.fold_id)));
    }
    check_leakage(spec, dataset)?;
    let train_raw = resolve(&spec.train_ids, by_id)?;
    let val_raw = resolve(&spec.val_ids, by_id)?;

    let stats = match cfg.norm_mode {
        NormMode::Global => Some(compute_global_mean(train_raw.iter().map(|c| &c.features))?),
        NormMode::UttWise => None,
    };
    let prep = |clips: Vec<&DatasetClip>| -> Result<Vec<LabeledClip>, TrainError> {
        clips
            .into_iter()
            .map(|c| {
                Ok(LabeledClip {
                    features: normalize(&c.features, cfg.norm_mode, stats.as_ref())?,
                    label: c.label,
                })
            })
            .collect()
    };
    let train_clips = prep(train_raw)?;
    let val_clips = prep(val_raw)?;

    let fold_key = format!("fold{}", spec.fold_id);
    let model = Model::new(model_cfg.clone(), derive_seed(cfg.seed, &format!("{fold_key}/init")))?;
    let fold_cfg = TrainConfig {
        seed: derive_seed(cfg.seed, &fold_key),
        ..cfg.clone()
    };
    let mut result = train(model, &train_clips, &val_clips, &fold_cfg, spec.fold_id)?;
    result.norm_stats = stats;
    Ok(result)
}

/// Trains each fold independently (in parallel) and returns results in
/// the order of `folds`.
pub fn run_folds(
    dataset: &[DatasetClip],
    folds: &[FoldSpec],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<FoldResult>, TrainError> {
    if folds.is_empty() {
        return Err(TrainError::BadFold("no folds given".into()));
    }
    cfg.validate()?;
    model_cfg.validate()?;
    let by_id: HashMap<&str, &DatasetClip> = dataset.iter().map(|c| (c.id(), c)).collect();
    if by_id.len() != dataset.len() {
        return Err(TrainError::BadFold("duplicate clip ids in dataset".into()));
    }
    // leakage is checked up front so a bad fold fails before any training
    for spec in folds {
        check_leakage(spec, dataset)?;
    }
    folds
        .par_iter()
        .map(|spec| run_fold(spec, &by_id, dataset, model_cfg, cfg))
        .collect()
}

/// Highest best-epoch validation AUC; the lower fold id wins ties.
pub fn select_best(results: &[FoldResult]) -> Option<&FoldResult> {
    results.iter().reduce(|best, r| {
        if r.best_val_auc > best.best_val_auc || (r.best_val_auc == best.best_val_auc && r.fold_id < best.fold_id) {
            r
        } else {
            best
        }
    })
}

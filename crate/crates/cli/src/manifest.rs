//! Manifest CSV (`clip_id,path,label,fold`), provenance sidecar, and the
//! fold splits derived from them.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use coughscreen_core::augment::{AugmentMethod, Provenance};
use coughscreen_core::training::{FoldSpec, TrainError};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

pub const HEADER: [&str; 4] = ["clip_id", "path", "label", "fold"];
pub const MAX_FOLD: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fold {
    K(usize),
    Test,
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fold::K(k) => write!(f, "{k}"),
            Fold::Test => f.write_str("test"),
        }
    }
}

impl std::str::FromStr for Fold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "test" {
            return Ok(Fold::Test);
        }
        match s.parse::<usize>() {
            Ok(k) if (1..=MAX_FOLD).contains(&k) => Ok(Fold::K(k)),
            _ => Err(format!("fold must be 1..{MAX_FOLD} or \"test\", got {s:?}")),
        }
    }
}

impl Serialize for Fold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_id: String,
    pub path: String,
    pub label: u8,
    pub fold: Fold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Relative paths resolve against this directory.
    pub base_dir: PathBuf,
}

fn check_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.contains(['/', '\\', ',']) || id.starts_with('.') {
        return Err(format!("clip id {id:?} must be a non-empty file-name-safe string"));
    }
    Ok(())
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            return Err(format!("header must be {}", HEADER.join(",")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
            let row = rec.map_err(|e| format!("line {}: {e}", i + 2))?;
            rows.push(row);
        }
        let m = Self {
            rows,
            base_dir: base_dir.to_path_buf(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            check_id(&r.clip_id)?;
            if r.label > 1 {
                return Err(format!("{}: label must be 0 or 1", r.clip_id));
            }
            if r.path.is_empty() || r.path.contains(',') {
                return Err(format!("{}: path must be non-empty and comma-free", r.clip_id));
            }
            if !seen.insert(r.clip_id.as_str()) {
                return Err(format!("duplicate clip id {}", r.clip_id));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let err = |msg: String| CliError::Manifest {
            path: path.display().to_string(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(err)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.clip_id == id)
    }

    /// Cross-validation folds present, ascending.
    pub fn folds(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .rows
            .iter()
            .filter_map(|r| match r.fold {
                Fold::K(k) => Some(k),
                Fold::Test => None,
            })
            .collect();
        set.into_iter().collect()
    }
}

/// `<dir>/<stem>.provenance.jsonl` for a manifest at `<dir>/<stem>.csv`.
pub fn provenance_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().unwrap_or_default().to_string_lossy();
    manifest.with_file_name(format!("{stem}.provenance.jsonl"))
}

/// Provenance records of the augmented rows of a manifest; empty when no
/// sidecar exists.
pub fn read_provenance(manifest: &Path) -> Result<Vec<Provenance>, CliError> {
    let path = provenance_path(manifest);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CliError::Json {
                path: path.display().to_string(),
                source: e,
            })
        })
        .collect()
}

pub fn provenance_jsonl(records: &[Provenance]) -> String {
    records
        .iter()
        .map(|p| serde_json::to_string(p).expect("provenance serializes") + "\n")
        .collect()
}

/// Every original clip whose audio reached `id`, following augmented
/// clips back through their own sources.
pub fn lineage(id: &str, prov: &HashMap<&str, &Provenance>) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![id];
    let mut seen = HashSet::new();
    while let Some(cur) = stack.pop() {
        let Some(p) = prov.get(cur) else { continue };
        for s in p.sources() {
            if seen.insert(s) {
                out.push(s.to_string());
                stack.push(s);
            }
        }
    }
    out
}

/// Every augmented row must carry its anchor's fold.
pub fn check_fold_tags(manifest: &Manifest, prov: &HashMap<&str, &Provenance>) -> Result<(), CliError> {
    for row in &manifest.rows {
        let Some(p) = prov.get(row.clip_id.as_str()) else { continue };
        let anchor = manifest.get(&p.anchor_id).ok_or_else(|| CliError::Manifest {
            path: manifest.base_dir.display().to_string(),
            msg: format!("{}: anchor {} is not in the manifest", row.clip_id, p.anchor_id),
        })?;
        if anchor.fold != row.fold {
            let fold = match anchor.fold {
                Fold::K(k) => k,
                Fold::Test => 0,
            };
            return Err(TrainError::LeakageDetected {
                fold,
                clip_id: row.clip_id.clone(),
                source_id: p.anchor_id.clone(),
            }
            .into());
        }
    }
    Ok(())
}

/// Train/validation split per fold. Validation holds the fold's original
/// clips. Training holds the other folds' original clips plus every
/// augmented clip none of whose ancestors is in validation. With
/// `noise_replaces_source`, a clip with a noisy copy in training is left
/// out in favour of that copy. `available` restricts both splits to clips
/// that have features.
pub fn fold_specs(
    manifest: &Manifest,
    prov: &HashMap<&str, &Provenance>,
    available: &HashSet<String>,
    only: Option<&[usize]>,
    noise_replaces_source: bool,
) -> Result<Vec<FoldSpec>, CliError> {
    check_fold_tags(manifest, prov)?;
    let folds: Vec<usize> = match only {
        Some(sel) => {
            let present = manifest.folds();
            if let Some(k) = sel.iter().find(|k| !present.contains(k)) {
                return Err(CliError::Validation(format!("fold {k} is not in the manifest")));
            }
            sel.to_vec()
        }
        None => manifest.folds(),
    };
    let mut specs = Vec::new();
    for k in folds {
        let val: Vec<String> = manifest
            .rows
            .iter()
            .filter(|r| r.fold == Fold::K(k) && !prov.contains_key(r.clip_id.as_str()) && available.contains(&r.clip_id))
            .map(|r| r.clip_id.clone())
            .collect();
        let val_set: HashSet<&str> = val.iter().map(String::as_str).collect();
        let mut train: Vec<&ManifestRow> = manifest
            .rows
            .iter()
            .filter(|r| matches!(r.fold, Fold::K(j) if j != k) && available.contains(&r.clip_id))
            .filter(|r| lineage(&r.clip_id, prov).iter().all(|s| !val_set.contains(s.as_str())))
            .collect();
        if noise_replaces_source {
            let replaced: HashSet<&str> = train
                .iter()
                .filter_map(|r| prov.get(r.clip_id.as_str()))
                .filter(|p| p.method == AugmentMethod::Noise)
                .map(|p| p.anchor_id.as_str())
                .collect();
            train.retain(|r| !replaced.contains(r.clip_id.as_str()));
        }
        specs.push(FoldSpec {
            fold_id: k,
            train_ids: train.into_iter().map(|r| r.clip_id.clone()).collect(),
            val_ids: val,
        });
    }
    Ok(specs)
}

//! Checkpoints as a single JSON document. Every float array is stored as
//! hex of the IEEE bit patterns so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BnStats, Tensor};
use crate::features::{NormMode, NormalizationStats};
use crate::util::{f64s_to_hex, hex_to_f64s, write_atomic};

use super::{Arch, Model, ModelConfig, ModelError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Normalization the model was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormInfo {
    pub mode: NormMode,
    /// Hex-encoded global mean; absent for utterance-wise normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<String>,
    #[serde(default)]
    pub n_frames_seen: u64,
}

impl NormInfo {
    pub fn new(mode: NormMode, stats: Option<&NormalizationStats>) -> Self {
        Self {
            mode,
            mean: stats.map(|s| f64s_to_hex(&s.mean)),
            n_frames_seen: stats.map_or(0, |s| s.n_frames_seen as u64),
        }
    }

    pub fn stats(&self) -> Result<Option<NormalizationStats>, ModelError> {
        self.mean
            .as_deref()
            .map(|h| {
                let mean = hex_to_f64s(h).ok_or_else(|| ModelError::Corrupt("bad hex in normalization mean".into()))?;
                Ok(NormalizationStats {
                    mean,
                    n_frames_seen: self.n_frames_seen as usize,
                })
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_auc: Option<f64>,
    /// Training objective name (`ce`, `auroc` or `jvae`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct BnRecord {
    mean: String,
    var: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    config: ModelConfig,
    meta: CheckpointMeta,
    params: Vec<ParamRecord>,
    bn_running: Vec<BnRecord>,
}

pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    let doc = Document {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config.clone(),
        meta: meta.clone(),
        params: model
            .params
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: f64s_to_hex(p.value.data()),
            })
            .collect(),
        bn_running: model
            .bn_running
            .iter()
            .map(|s| BnRecord {
                mean: f64s_to_hex(&s.mean),
                var: f64s_to_hex(&s.var),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("checkpoint serializes");
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn decode(h: &str, what: &str) -> Result<Vec<f64>, ModelError> {
    hex_to_f64s(h).ok_or_else(|| ModelError::Corrupt(format!("bad hex data for {what}")))
}

/// Parses and validates a checkpoint: every parameter the configured
/// architecture defines must be present with the right shape, and nothing
/// else.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = fs::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(ModelError::VersionMismatch(format!(
                "format version {v}, expected {CHECKPOINT_FORMAT_VERSION}"
            )))
        }
        None => return Err(ModelError::Corrupt("missing format_version".into())),
    }
    let doc: Document = serde_json::from_value(raw).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let mut model = Model::new(doc.config, 0).map_err(|e| ModelError::Corrupt(format!("stored config invalid: {e}")))?;
    if doc.params.len() != model.params.len() {
        return Err(ModelError::Corrupt(format!(
            "expected {} parameters, found {}",
            model.params.len(),
            doc.params.len()
        )));
    }
    for rec in doc.params {
        let id = model
            .params
            .id(&rec.name)
            .map_err(|_| ModelError::Corrupt(format!("unexpected parameter {}", rec.name)))?;
        let slot = model.params.get_mut(id);
        if slot.value.shape() != rec.shape.as_slice() {
            return Err(ModelError::Corrupt(format!(
                "parameter {} has shape {:?}, expected {:?}",
                rec.name,
                rec.shape,
                slot.value.shape()
            )));
        }
        let data = decode(&rec.data, &rec.name)?;
        slot.value = Tensor::new(rec.shape, data).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    }
    if doc.bn_running.len() != model.bn_running.len() {
        return Err(ModelError::Corrupt("batchnorm statistics count mismatch".into()));
    }
    for (slot, rec) in model.bn_running.iter_mut().zip(doc.bn_running) {
        let s = BnStats {
            mean: decode(&rec.mean, "running mean")?,
            var: decode(&rec.var, "running var")?,
        };
        if s.mean.len() != slot.mean.len() || s.var.len() != slot.var.len() {
            return Err(ModelError::Corrupt("batchnorm statistics width mismatch".into()));
        }
        *slot = s;
    }
    Ok(Checkpoint { model, meta: doc.meta })
}

/// [`read_checkpoint`] that also rejects a checkpoint whose architecture
/// differs from `expected`.
pub fn load_checkpoint(path: &Path, expected: Option<Arch>) -> Result<Checkpoint, ModelError> {
    let ck = read_checkpoint(path)?;
    if let Some(arch) = expected {
        if ck.model.config.arch != arch {
            return Err(ModelError::VersionMismatch(format!(
                "checkpoint holds {:?}, requested {arch:?}",
                ck.model.config.arch
            )));
        }
    }
    Ok(ck)
}

use std::io;

use coughscreen_core::audio::AudioError;
use coughscreen_core::augment::AugmentError;
use coughscreen_core::eval::EvalError;
use coughscreen_core::features::FeatureError;
use coughscreen_core::models::ModelError;
use coughscreen_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("noise augmentation needs --noise-dir or --synthetic-noise")]
    MissingNoiseDir,
    #[error("clip {clip_id}: nothing left after activity detection")]
    EmptyAfterVad { clip_id: String },
    #[error("{failed} of {total} clips failed")]
    ClipsFailed { failed: usize, total: usize },
    #[error("gradient check failed for {0} architecture/loss combinations")]
    GradCheckFailed(usize),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// 1 for problems with the inputs or flags, 2 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_)
            | CliError::Manifest { .. }
            | CliError::MissingNoiseDir
            | CliError::Json { .. }
            | CliError::Augment(AugmentError::PoolTooSmall { .. })
            | CliError::Augment(AugmentError::BadConfig(_))
            | CliError::Train(TrainError::LeakageDetected { .. })
            | CliError::Train(TrainError::BadConfig(_))
            | CliError::Train(TrainError::BadFold(_))
            | CliError::Eval(EvalError::SingleClass { .. })
            | CliError::Eval(EvalError::IdMismatch(_))
            | CliError::Model(ModelError::VersionMismatch(_))
            | CliError::Model(ModelError::Corrupt(_)) => 1,
            _ => 2,
        }
    }
}

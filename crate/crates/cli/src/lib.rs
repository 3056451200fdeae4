//! Manifest-driven pipeline around `coughscreen-core`: featurize, augment,
//! train, evaluate, ensemble, synthesize data and check gradients.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod synth;

pub use config::PipelineConfig;
pub use error::CliError;
pub use manifest::{Fold, Manifest, ManifestRow};

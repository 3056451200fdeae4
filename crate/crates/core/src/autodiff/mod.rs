//! Tape-based reverse-mode differentiation over dense f64 tensors.

mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, DEFAULT_H, DEFAULT_TOL};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, BnStats, Gradients, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("{0}")]
    BadArgument(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

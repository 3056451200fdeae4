//! Classifier architectures: LSTM variants, a per-frame 1-D CNN (with an
//! optional residual form), an MLP baseline, and the joint VAE.

mod checkpoint;
mod cnn;
mod jvae;
mod lstm;
mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BnStats, ParamStore, Tape, Tensor, Var};
use crate::features::FEATURE_DIM;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, NormInfo, CHECKPOINT_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variant {variant:?} is not valid for {arch:?}")]
    BadVariant { arch: Arch, variant: LstmVariant },
    #[error("bad model shape: {0}")]
    BadShape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Lstm,
    Cnn,
    Mlp,
    Jvae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmVariant {
    Uni,
    Bidir,
    SeqToConcat,
    SeqToLast1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden_dim: usize,
    pub variant: LstmVariant,
    pub seq_len: usize,
    pub context_len: usize,
    pub in_channels: usize,
    pub filter_len: usize,
    pub residual: bool,
    /// 2 for cross-entropy training, 1 for the pairwise AUROC loss.
    pub out_dim: usize,
    pub input_dim: usize,
    /// JVAE latent width; defaults to `ceil(hidden_dim / 2)`.
    pub latent_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Lstm,
            layers: 1,
            hidden_dim: 48,
            variant: LstmVariant::Uni,
            seq_len: 30,
            context_len: 20,
            in_channels: 3,
            filter_len: 5,
            residual: false,
            out_dim: 2,
            input_dim: FEATURE_DIM,
            latent_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn lstm(variant: LstmVariant, layers: usize, hidden_dim: usize, seq_len: usize) -> Self {
        Self {
            variant,
            layers,
            hidden_dim,
            seq_len,
            ..Self::default()
        }
    }

    pub fn cnn(layers: usize, hidden_dim: usize) -> Self {
        Self {
            arch: Arch::Cnn,
            layers,
            hidden_dim,
            ..Self::default()
        }
    }

    /// The reduced residual network: filter 3, 32 channels.
    pub fn resnet(layers: usize) -> Self {
        Self {
            arch: Arch::Cnn,
            layers,
            hidden_dim: 32,
            filter_len: 3,
            residual: true,
            ..Self::default()
        }
    }

    pub fn mlp(layers: usize, hidden_dim: usize) -> Self {
        Self {
            arch: Arch::Mlp,
            layers,
            hidden_dim,
            ..Self::default()
        }
    }

    pub fn jvae(layers: usize, hidden_dim: usize) -> Self {
        Self {
            arch: Arch::Jvae,
            layers,
            hidden_dim,
            out_dim: 1,
            ..Self::default()
        }
    }

    pub fn latent(&self) -> usize {
        self.latent_dim.unwrap_or(self.hidden_dim.div_ceil(2))
    }

    /// Frames per input window for sequence models.
    pub fn window_len(&self) -> usize {
        self.context_len + self.seq_len
    }

    pub fn is_sequence(&self) -> bool {
        self.arch == Arch::Lstm
    }

    /// Whether outputs are one per loss-bearing frame (as opposed to one
    /// per window).
    pub fn per_frame(&self) -> bool {
        !(self.arch == Arch::Lstm && matches!(self.variant, LstmVariant::SeqToConcat | LstmVariant::SeqToLast1))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::BadShape("hidden_dim must be positive".into()));
        }
        if self.input_dim == 0 || self.out_dim == 0 {
            return Err(ModelError::BadShape("input_dim and out_dim must be positive".into()));
        }
        if self.arch != Arch::Lstm && self.variant != LstmVariant::Uni {
            return Err(ModelError::BadVariant {
                arch: self.arch,
                variant: self.variant,
            });
        }
        match self.arch {
            Arch::Lstm => {
                if self.seq_len == 0 || self.layers == 0 {
                    return Err(ModelError::BadShape("lstm needs seq_len >= 1 and layers >= 1".into()));
                }
            }
            Arch::Cnn => {
                if self.layers == 0 || self.in_channels == 0 || self.filter_len == 0 {
                    return Err(ModelError::BadShape("cnn needs layers, in_channels and filter_len >= 1".into()));
                }
                if self.input_dim % self.in_channels != 0 {
                    return Err(ModelError::BadShape(format!(
                        "input_dim {} is not divisible into {} channels",
                        self.input_dim, self.in_channels
                    )));
                }
            }
            Arch::Jvae => {
                if self.layers == 0 || self.latent() == 0 {
                    return Err(ModelError::BadShape("jvae needs layers >= 1 and a positive latent".into()));
                }
                if self.out_dim != 1 {
                    return Err(ModelError::BadShape("jvae has a single probability output".into()));
                }
            }
            Arch::Mlp => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; sampled latent in the JVAE.
    Train,
    /// Running statistics; the JVAE latent is the posterior mean unless
    /// noise is supplied.
    Eval,
}

/// JVAE forward results, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct JvaeOutputs {
    pub x_hat: Var,
    pub y_logit: Var,
    pub y_prob: Var,
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, seq_len, out]` for per-frame LSTMs, `[B, out]` for segment
    /// LSTMs, `[N, out]` for frame models (the JVAE logit for `jvae`).
    pub logits: Var,
    pub jvae: Option<JvaeOutputs>,
    /// CNN activations before global pooling, `[N, C, L]`.
    pub pre_pool: Option<Var>,
    /// Batch statistics of each batchnorm layer in train mode.
    pub bn_batch: Vec<BnStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running statistics per batchnorm layer, in layer order.
    pub bn_running: Vec<BnStats>,
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Registers `{name}.w [fan_in, fan_out]` and `{name}.b [fan_out]`, both
/// uniform in `±1/sqrt(fan_in)`.
pub(crate) fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], bound));
    store.add(format!("{name}.b"), uniform(rng, &[fan_out], bound));
}

pub(crate) fn linear(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var, ModelError> {
    let w = tape.param(store, store.id(&format!("{name}.w"))?);
    let b = tape.param(store, store.id(&format!("{name}.b"))?);
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

impl Model {
    /// Builds a freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let n_bn = match config.arch {
            Arch::Lstm => {
                lstm::init(&config, &mut params, &mut rng);
                0
            }
            Arch::Cnn => cnn::init(&config, &mut params, &mut rng),
            Arch::Mlp => {
                mlp::init(&config, &mut params, &mut rng);
                0
            }
            Arch::Jvae => {
                jvae::init(&config, &mut params, &mut rng);
                0
            }
        };
        let channels = config.hidden_dim;
        Ok(Self {
            config,
            params,
            bn_running: (0..n_bn).map(|_| BnStats::identity(channels)).collect(),
        })
    }

    /// Expected input shape for a batch of `n` items.
    pub fn input_shape(&self, n: usize) -> Vec<usize> {
        if self.config.is_sequence() {
            vec![n, self.config.window_len(), self.config.input_dim]
        } else {
            vec![n, self.config.input_dim]
        }
    }

    /// Runs the model on `input`, using `self.params` for weights.
    pub fn forward(&self, tape: &mut Tape, input: &Tensor, mode: Mode, eps: Option<&Tensor>) -> Result<Forward, ModelError> {
        self.forward_with(tape, &self.params, input, mode, eps)
    }

    /// As [`Model::forward`] with weights taken from `store`, which must
    /// hold this model's parameter names (used by gradient checking).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &Tensor,
        mode: Mode,
        eps: Option<&Tensor>,
    ) -> Result<Forward, ModelError> {
        let shape = input.shape();
        let n = shape[0];
        if shape != self.input_shape(n).as_slice() {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                op: "model input",
                detail: format!("expected {:?}, got {shape:?}", self.input_shape(n)),
            }));
        }
        let x = tape.constant(input.clone());
        match self.config.arch {
            Arch::Lstm => lstm::forward(&self.config, tape, store, x),
            Arch::Cnn => cnn::forward(&self.config, tape, store, x, mode, &self.bn_running),
            Arch::Mlp => mlp::forward(&self.config, tape, store, x),
            Arch::Jvae => jvae::forward(&self.config, tape, store, x, mode, eps),
        }
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, batch: &[BnStats]) {
        for (r, b) in self.bn_running.iter_mut().zip(batch) {
            r.update(b);
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}

/// Flattens per-frame outputs to rows: `[B, S, C] -> [B*S, C]`.
pub fn output_rows(tape: &mut Tape, logits: Var) -> Result<Var, ModelError> {
    let s = tape.shape(logits).to_vec();
    if s.len() == 3 {
        Ok(tape.reshape(logits, &[s[0] * s[1], s[2]])?)
    } else {
        Ok(logits)
    }
}

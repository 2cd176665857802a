//! Tiny GPT-style causal decoder over event-ID tokens.
//!
//! Pre-norm blocks (`x + attn(ln(x))`, `x + ffn(ln(x))`), learned position
//! embeddings, a final layer norm, a two-way classification head read out
//! at the last real token, and a language-model head tied to the token
//! embedding.

mod checkpoint;
mod forward;
mod pretrain;

pub use checkpoint::{hash_bytes, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{
    causal_attention, classification_grads, classifier_on_tape, classifier_logits_by_position, forward_classifier, forward_lm, lm_grads,
    sequence_log_prob, ClassifierOutput, SampleGrads,
};
pub use pretrain::{pretrain_lm, PretrainConfig, PretrainReport};

use std::io;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, Tensor2};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("window holds no real tokens")]
    SequenceTooShort,
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint vocabulary hash {found} does not match expected {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 256,
            max_seq_len: 128,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len == 0 || self.max_seq_len > 128 {
            return bad(format!("max_seq_len must lie in 1..=128, got {}", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Checks that windows of `window_length` tokens fit with room to spare.
    pub fn check_window(&self, window_length: usize) -> Result<(), ModelError> {
        if self.max_seq_len < window_length + 1 {
            return Err(ModelError::BadConfig(format!(
                "max_seq_len {} must be at least window_length + 1 = {}",
                self.max_seq_len,
                window_length + 1
            )));
        }
        Ok(())
    }
}

/// Slot of each tensor inside a decoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSlot {
    Ln1Gain,
    Ln1Bias,
    Qkv,
    QkvBias,
    AttnOut,
    AttnOutBias,
    Ln2Gain,
    Ln2Bias,
    Ff1,
    Ff1Bias,
    Ff2,
    Ff2Bias,
}

impl LayerSlot {
    pub const ALL: [LayerSlot; 12] = [
        LayerSlot::Ln1Gain,
        LayerSlot::Ln1Bias,
        LayerSlot::Qkv,
        LayerSlot::QkvBias,
        LayerSlot::AttnOut,
        LayerSlot::AttnOutBias,
        LayerSlot::Ln2Gain,
        LayerSlot::Ln2Bias,
        LayerSlot::Ff1,
        LayerSlot::Ff1Bias,
        LayerSlot::Ff2,
        LayerSlot::Ff2Bias,
    ];

    fn name(self) -> &'static str {
        match self {
            LayerSlot::Ln1Gain => "ln1.gain",
            LayerSlot::Ln1Bias => "ln1.bias",
            LayerSlot::Qkv => "attn.qkv",
            LayerSlot::QkvBias => "attn.qkv_bias",
            LayerSlot::AttnOut => "attn.out",
            LayerSlot::AttnOutBias => "attn.out_bias",
            LayerSlot::Ln2Gain => "ln2.gain",
            LayerSlot::Ln2Bias => "ln2.bias",
            LayerSlot::Ff1 => "ffn.in",
            LayerSlot::Ff1Bias => "ffn.in_bias",
            LayerSlot::Ff2 => "ffn.out",
            LayerSlot::Ff2Bias => "ffn.out_bias",
        }
    }

    fn is_matrix(self) -> bool {
        matches!(self, LayerSlot::Qkv | LayerSlot::AttnOut | LayerSlot::Ff1 | LayerSlot::Ff2)
    }
}

const PER_LAYER: usize = LayerSlot::ALL.len();

/// Flat index arithmetic over the parameter list.
#[derive(Clone, Copy, Debug)]
pub struct ParamLayout {
    n_layers: usize,
}

impl ParamLayout {
    pub const TOKEN_EMBEDDING: usize = 0;
    pub const POSITION_EMBEDDING: usize = 1;

    pub fn new(config: &ModelConfig) -> Self {
        Self {
            n_layers: config.n_layers,
        }
    }

    pub fn layer(&self, layer: usize, slot: LayerSlot) -> usize {
        2 + layer * PER_LAYER + slot as usize
    }

    pub fn final_gain(&self) -> usize {
        2 + self.n_layers * PER_LAYER
    }

    pub fn final_bias(&self) -> usize {
        self.final_gain() + 1
    }

    pub fn head_weight(&self) -> usize {
        self.final_gain() + 2
    }

    pub fn head_bias(&self) -> usize {
        self.final_gain() + 3
    }

    pub fn len(&self) -> usize {
        self.final_gain() + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, index: usize) -> String {
        match index {
            Self::TOKEN_EMBEDDING => "token_embedding".into(),
            Self::POSITION_EMBEDDING => "position_embedding".into(),
            i if i < self.final_gain() => {
                let l = (i - 2) / PER_LAYER;
                format!("layer{l}.{}", LayerSlot::ALL[(i - 2) % PER_LAYER].name())
            }
            i if i == self.final_gain() => "final_ln.gain".into(),
            i if i == self.final_bias() => "final_ln.bias".into(),
            i if i == self.head_weight() => "head.weight".into(),
            _ => "head.bias".into(),
        }
    }

    /// Weight decay applies to embeddings and projection matrices only.
    pub fn decays(&self, index: usize) -> bool {
        match index {
            Self::TOKEN_EMBEDDING | Self::POSITION_EMBEDDING => true,
            i if i < self.final_gain() => LayerSlot::ALL[(i - 2) % PER_LAYER].is_matrix(),
            i => i == self.head_weight(),
        }
    }
}

/// All decoder weights, in [`ParamLayout`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: Vec<Tensor2>,
}

/// Standard deviation of the normal initializer.
pub const INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self::init_with_std(config, INIT_STD, rng))
    }

    pub fn init_with_std<R: Rng>(config: &ModelConfig, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        let layout = ParamLayout::new(config);
        let tensors = expected_shapes(config)
            .into_iter()
            .enumerate()
            .map(|(i, (rows, cols))| match init_kind(&layout, i) {
                Init::Normal => {
                    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
                    Tensor2::from_vec(rows, cols, data).expect("sized")
                }
                Init::Ones => Tensor2::filled(rows, cols, 1.0),
                Init::Zeros => Tensor2::zeros(rows, cols),
            })
            .collect();
        Self { tensors }
    }

    pub fn layout(config: &ModelConfig) -> ParamLayout {
        ParamLayout::new(config)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor2> {
        self.tensors.iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect()
    }

    /// Verifies every tensor has the shape `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = expected_shapes(config);
        if expected.len() != self.tensors.len() {
            return Err(ModelError::BadConfig(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        let layout = ParamLayout::new(config);
        for (i, (shape, t)) in expected.iter().zip(&self.tensors).enumerate() {
            if *shape != t.shape() {
                return Err(ModelError::BadConfig(format!(
                    "{} has shape {:?}, expected {:?}",
                    layout.name(i),
                    t.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }
}

enum Init {
    Normal,
    Ones,
    Zeros,
}

fn init_kind(layout: &ParamLayout, index: usize) -> Init {
    if layout.decays(index) {
        return Init::Normal;
    }
    let is_gain = index == layout.final_gain()
        || (index >= 2
            && index < layout.final_gain()
            && matches!(LayerSlot::ALL[(index - 2) % PER_LAYER], LayerSlot::Ln1Gain | LayerSlot::Ln2Gain));
    if is_gain {
        Init::Ones
    } else {
        Init::Zeros
    }
}

fn expected_shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
    let d = config.d_model;
    let mut shapes = vec![(config.vocab_size, d), (config.max_seq_len, d)];
    for _ in 0..config.n_layers {
        for slot in LayerSlot::ALL {
            shapes.push(match slot {
                LayerSlot::Ln1Gain | LayerSlot::Ln1Bias | LayerSlot::Ln2Gain | LayerSlot::Ln2Bias => (1, d),
                LayerSlot::AttnOutBias | LayerSlot::Ff2Bias => (1, d),
                LayerSlot::Qkv => (d, 3 * d),
                LayerSlot::QkvBias => (1, 3 * d),
                LayerSlot::AttnOut => (d, d),
                LayerSlot::Ff1 => (d, config.d_ff),
                LayerSlot::Ff1Bias => (1, config.d_ff),
                LayerSlot::Ff2 => (config.d_ff, d),
            });
        }
    }
    shapes.extend([(1, d), (1, d), (d, 2), (1, 2)]);
    shapes
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_names_and_count() {
        let config = ModelConfig {
            n_layers: 2,
            ..ModelConfig::default()
        };
        let layout = ParamLayout::new(&config);
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(params.tensors.len(), layout.len());
        assert_eq!(layout.name(layout.layer(1, LayerSlot::Qkv)), "layer1.attn.qkv");
        assert_eq!(layout.name(layout.head_bias()), "head.bias");
        assert!(layout.decays(layout.layer(0, LayerSlot::Ff2)));
        assert!(!layout.decays(layout.layer(0, LayerSlot::Ln1Gain)));
        assert!(!layout.decays(layout.head_bias()));
        params.check_shapes(&config).unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            d_model: 10,
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let too_long = ModelConfig {
            max_seq_len: 200,
            ..ModelConfig::default()
        };
        assert!(too_long.validate().is_err());
        assert!(ModelConfig::default().check_window(64).is_ok());
        assert!(ModelConfig::default().check_window(128).is_err());
    }
}

//! BERT encoder inference with full hidden-state capture.
//!
//! [`forward`] returns `num_layers + 1` matrices: index 0 is the embedding
//! output (after its layer norm) and index `k` is the output of block `k`.
//! "Layer 8" therefore means `layers[8]`, the eighth block's output.

mod forward;
mod weights;

use alloc::string::String;
use alloc::vec::Vec;

pub use forward::{forward, forward_ids, forward_with_hook, ForwardError, ForwardHook, NoHook, NormSite};
pub use weights::{tensor_names, EncoderLayer, LayerNorm, Linear, ModelWeights, Tensor, TensorSource, WeightsError};

use crate::matrix::Matrix;

/// Encoder hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_position: usize,
    /// Rows in the segment embedding table. Only segment 0 is ever used.
    pub type_vocab_size: usize,
    pub layer_norm_eps: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("hidden_size {hidden_size} is not divisible by num_heads {num_heads}")]
    IndivisibleHeads { hidden_size: usize, num_heads: usize },
}

impl ModelConfig {
    /// bert-base-uncased: 12 layers, 768 hidden, 12 heads.
    pub const fn bert_base() -> Self {
        Self {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            intermediate_size: 3072,
            vocab_size: 30522,
            max_position: 512,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Number of hidden-state matrices a forward pass produces.
    pub fn num_hidden_states(&self) -> usize {
        self.num_layers + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_position", self.max_position),
            ("type_vocab_size", self.type_vocab_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(ConfigError::NotPositive("layer_norm_eps"));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(ConfigError::IndivisibleHeads {
                hidden_size: self.hidden_size,
                num_heads: self.num_heads,
            });
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::bert_base()
    }
}

/// Every hidden-state matrix of one forward pass, plus the token metadata
/// needed to label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub layers: Vec<Matrix>,
    pub tokens: Vec<String>,
    pub is_special: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("layer {layer} out of range 0..={max}")]
pub struct LayerOutOfRange {
    pub layer: usize,
    pub max: usize,
}

impl HiddenStates {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Highest valid layer index.
    pub fn max_layer(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn layer(&self, layer: usize) -> Result<&Matrix, LayerOutOfRange> {
        layer_slice(self, layer)
    }
}

/// Hidden-state matrix at `layer` (0 = embeddings).
pub fn layer_slice(states: &HiddenStates, layer: usize) -> Result<&Matrix, LayerOutOfRange> {
    states.layers.get(layer).ok_or(LayerOutOfRange {
        layer,
        max: states.max_layer(),
    })
}

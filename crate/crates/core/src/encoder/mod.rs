//! The HELM-BERT network: token embeddings, a hybrid convolution/attention
//! first layer, disentangled-attention transformer blocks, an enhanced mask
//! decoder that injects absolute positions at decoding time, the MLM head and
//! mean pooling.

mod model;
mod weights;

pub use model::{
    disentangled_attention_layer, enhanced_mask_decoder, forward_hidden, forward_mlm, mean_pool,
    mlm_head, ngie_layer, relative_bucket, transformer_block, MlmOutput, Mode, Session,
    LAYER_NORM_EPS,
};
pub use weights::{ConvBranch, EncoderWeights, LayerWeights, Linear, MlmHead};

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("hidden size {hidden} not divisible by {heads} heads")]
    BadHeadSplit { hidden: usize, heads: usize },
    #[error("sequence length {n} exceeds max_len {max_len}")]
    PositionOverflow { n: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters plus the ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    /// Relative-distance clipping radius; the bucket table has 2*kappa rows.
    pub max_relative_distance: usize,
    pub dropout_rate: f64,
    pub use_disentangled: bool,
    pub use_ngie: bool,
    pub use_emd: bool,
    pub use_span_mask: bool,
}

impl ModelConfig {
    /// Desk-scale defaults around a given vocabulary and width.
    pub fn new(vocab_size: usize, hidden: usize, n_layers: usize, heads: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden,
            n_layers,
            heads,
            ffn_dim: 4 * hidden,
            max_len: 512,
            max_relative_distance: 8,
            dropout_rate: 0.1,
            use_disentangled: true,
            use_ngie: true,
            use_emd: true,
            use_span_mask: true,
        }
    }

    /// Paper-scale shape: 6 layers, H = 768, 12 heads.
    pub fn paper_scale(vocab_size: usize) -> Self {
        let mut cfg = ModelConfig::new(vocab_size, 768, 6, 12);
        cfg.max_relative_distance = 128;
        cfg
    }

    /// The all-off ablation: standard self-attention, no convolution branch,
    /// absolute positions at the input layer, token-level masking.
    pub fn vanilla(mut self) -> Self {
        self.use_disentangled = false;
        self.use_ngie = false;
        self.use_emd = false;
        self.use_span_mask = false;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(EncoderError::BadHeadSplit {
                hidden: self.hidden,
                heads: self.heads,
            });
        }
        Ok(())
    }

    /// Attention-score scaling: 1/sqrt(3 d_h) when the three disentangled
    /// terms are summed, 1/sqrt(d_h) for standard attention.
    pub fn attention_scale(&self) -> f64 {
        let d = self.head_dim() as f64;
        if self.use_disentangled {
            1.0 / (3.0 * d).sqrt()
        } else {
            1.0 / d.sqrt()
        }
    }
}

/// Clipped relative-position bucket: 0 when i - j <= -kappa, 2*kappa - 1 when
/// i - j >= kappa, otherwise i - j + kappa. delta(i, i) = kappa.
pub fn bucket_count(kappa: usize) -> usize {
    2 * kappa
}

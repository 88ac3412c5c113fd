//! Optimization: AdamW with cosine annealing and gradient clipping, the
//! pre-training loop with early stopping, the three downstream protocols and
//! binary checkpoints.

mod checkpoint;
mod finetune;
mod heads;
mod optimizer;
mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointContents};
pub use finetune::{
    finetune_binary_vectors, finetune_binary_vectors_at, finetune_regression_sequences,
    finetune_regression_vectors, finetune_regression_vectors_at, pooled_embeddings,
    FinetuneConfig, FinetuneOutput, PredictionRow, Protocol,
};
pub use heads::{HeadKind, HeadSpec, HeadWeights};
pub use optimizer::{clip_gradients, cosine_lr, AdamWState, CosineSchedule, OptimizerHyper};
pub use pretrain::{pretrain, EpochStats, PretrainConfig, PretrainOutput};

use crate::encoder::EncoderError;
use crate::eval::EvalError;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("split references unknown id {0}")]
    UnknownSplitId(String),
    #[error("missing protein vector for {0}")]
    MissingProteinVector(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing tensor {0} in checkpoint")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Encoder(EncoderError::Tensor(e))
    }
}

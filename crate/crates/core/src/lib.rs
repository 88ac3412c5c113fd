//! Desk-scale implementation of a HELM-notation peptide language model:
//! notation parsing and topology analysis, compression tokenization, corpus
//! curation and splitting, a small autodiff substrate, a disentangled-attention
//! encoder with span-masked MLM pre-training, downstream fine-tuning protocols,
//! and fold-wise statistical comparison.

pub mod helm;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod linalg;
pub mod rng;
pub mod synthetic;
pub mod stats;
pub mod tensor;
pub mod tokenizer;
pub mod training;

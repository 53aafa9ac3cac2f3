//! Language-model side of the pipeline: a BPE tokenizer and a small
//! decoder-only transformer trained by next-token prediction.

pub mod checkpoint;
pub mod model;
pub mod sample;
pub mod scalar;
pub mod tokenizer;
pub mod train;

use thiserror::Error;

pub use checkpoint::{AdamState, Checkpoint};
pub use model::{ForwardCache, KvCache, LossReport, Model, ModelConfig, Sequence};
pub use sample::{generate, sample_next, Completion, SamplingParams};
pub use tokenizer::{train_bpe, Vocab};
pub use train::{finetune, mean_nll, nll, train_clm, LossMask, StepLog, TrainOptions, TrainReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the context of {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tokenizer(#[from] tokenizer::TokenizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

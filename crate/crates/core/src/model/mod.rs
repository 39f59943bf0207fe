//! Small causal transformer language model with exact gradients.

mod checkpoint;
mod forward;
mod loss;
mod optim;
mod params;
mod pretrain;
mod sample;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{backward, forward, forward_trace, DecodeState, ForwardTrace};
pub use loss::{log_probs, log_probs_with_trace, log_softmax_row, loss_and_grads, sequence_log_prob_backward, BatchLoss};
pub use optim::{clip_grad_norm, Adam, AdamState};
pub use params::{layout, param_count, ModelConfig, ModelParams, Scalar, TensorSpec};
pub use pretrain::{mean_nll, pretrain, split_by_hash, EpochStats, PretrainConfig, PretrainOutcome, Split};
pub use sample::{sample, sample_from_logits, sample_with_log_probs};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch has no non-PAD target positions")]
    AllPadBatch,
    #[error("prompt length {prompt_len} must be below sequence length {len}")]
    PromptTooLong { prompt_len: usize, len: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

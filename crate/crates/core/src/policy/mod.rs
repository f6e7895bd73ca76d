//! Response policy: tokenizer, tiny causal language model with a value head,
//! exact sequence scoring, sampling and gradient verification.

mod checkpoint;
mod decode;
mod gradcheck;
mod model;
mod tokenizer;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decode::{greedy_decoding, sample_response, sequence_log_prob, DecodingParams, SequenceScore};
pub use gradcheck::{cross_entropy_loss_and_grad, grad_check, GradCheckMode};
pub use model::{
    log_softmax, softmax, ForwardCache, ForwardOutput, HeadInit, LayerLayout, Layout, ModelConfig,
    ModelRole, PolicyModel, Slot,
};
pub use tokenizer::{
    build_tokenizer, encode_exchange, word_tokens, TokenId, Tokenizer, BOS, EOS, PAD, SPECIAL_TOKENS,
    SYS, UNK, USR,
};

/// Floating-point element type of a model (f32 for training, f64 for checks).
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn c(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn c(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("max_vocab {0} cannot hold the special tokens plus one word")]
    VocabTooSmall(usize),
    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("response must end with EOS")]
    MissingEos,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid decoding parameters: {0}")]
    InvalidDecoding(String),
    #[error("frozen reference model cannot be modified")]
    FrozenModel,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

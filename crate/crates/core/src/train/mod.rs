//! Training: supervised fine-tuning and PPO against a satisfaction scorer,
//! plus greedy held-out evaluation.

mod eval;
mod optim;
mod ppo;
mod sft;

use thiserror::Error;

use crate::policy::PolicyError;
use crate::simulator::SimulatorError;

pub use eval::{evaluate_policy, generate_response, EvalReport};
pub use optim::{clip_grad_norm, AdamW};
pub use ppo::{
    compute_advantages, ppo_loss_and_grad, ppo_train, ppo_train_unvalidated, ppo_update, shape_rewards, standardize_advantages,
    PpoConfig, PpoLoss, PpoReport, ScoreNormalization, TrainStats, Trajectory,
};
pub use sft::{sft_train, sft_train_unvalidated, SftConfig, SftReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model is not trainable (frozen reference)")]
    NotTrainable,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no training data")]
    NoData,
    #[error("all {0} exchanges exceed the context window")]
    AllPairsSkipped(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("scorer failed during iteration {iteration}: {source}")]
    Scorer {
        iteration: usize,
        #[source]
        source: SimulatorError,
    },
    #[error("scorer failed during evaluation: {0}")]
    EvalScorer(#[source] SimulatorError),
}

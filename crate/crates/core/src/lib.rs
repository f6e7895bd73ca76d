//! Satisfaction-guided response optimization for task-oriented dialogue:
//! supervised fine-tuning of a small response policy, PPO against a pluggable
//! user-satisfaction scorer, and the evaluation metrics around it.

pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod policy;
pub mod simulator;
pub mod train;

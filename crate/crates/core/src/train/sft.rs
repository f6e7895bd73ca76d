//! Supervised fine-tuning: maximum likelihood of gold responses given
//! their dialogue histories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, AdamW};
use super::TrainError;
use crate::corpus::ExchangePair;
use crate::policy::{cross_entropy_loss_and_grad, encode_exchange, ModelRole, PolicyModel, Scalar, TokenId, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_steps: 500,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("sft.learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return bad("sft.batch_size and sft.max_steps must be >= 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("sft.grad_clip_norm must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean per-token cross-entropy of each step's batch, before the update.
    pub losses: Vec<f64>,
    pub skipped_pairs: usize,
}

/// Encodes pairs, dropping (with a warning) those exceeding the context
/// window. Errors when nothing remains.
pub(crate) fn encode_pairs(
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    max_seq_len: usize,
) -> Result<(Vec<(Vec<TokenId>, Vec<TokenId>)>, usize), TrainError> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for pair in pairs {
        match encode_exchange(tokenizer, &pair.history, Some(&pair.target.text), max_seq_len) {
            Ok((ctx, tgt)) => out.push((ctx, tgt.expect("target requested"))),
            Err(e) => {
                log::warn!("skipping exchange: {e}");
                skipped += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(TrainError::AllPairsSkipped(skipped));
    }
    Ok((out, skipped))
}

pub fn sft_train<F: Scalar>(
    model: &mut PolicyModel<F>,
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    config: &SftConfig,
) -> Result<SftReport, TrainError> {
    config.validate()?;
    sft_train_unvalidated(model, tokenizer, pairs, config)
}

/// [`sft_train`] without configuration checks; lets tests run with a zero
/// learning rate.
#[doc(hidden)]
pub fn sft_train_unvalidated<F: Scalar>(
    model: &mut PolicyModel<F>,
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    config: &SftConfig,
) -> Result<SftReport, TrainError> {
    if model.role() != ModelRole::TrainablePolicy {
        return Err(TrainError::NotTrainable);
    }
    if pairs.is_empty() {
        return Err(TrainError::NoData);
    }
    let (encoded, skipped_pairs) = encode_pairs(tokenizer, pairs, model.config().max_seq_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(model.num_params());
    let mut losses = Vec::with_capacity(config.max_steps);

    for _ in 0..config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(encoded[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, mut grads) = cross_entropy_loss_and_grad(model, &batch)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite("sft loss"));
        }
        losses.push(loss);
        clip_grad_norm(&mut grads, config.grad_clip_norm);
        opt.step(model.params_mut()?, &grads, |_| config.learning_rate);
    }
    Ok(SftReport {
        losses,
        skipped_pairs,
    })
}

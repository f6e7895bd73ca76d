//! PPO with a KL-shaped, satisfaction-terminal reward.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, AdamW};
use super::TrainError;
use crate::corpus::ExchangePair;
use crate::policy::{
    encode_exchange, log_softmax, sample_response, sequence_log_prob, DecodingParams, ModelRole, PolicyModel,
    Scalar, TokenId, Tokenizer,
};
use crate::simulator::SimulatorError;

/// Weight of the value-regression term in the total loss.
const VALUE_COEF: f64 = 0.5;
/// Floor on the standard deviation used to standardize advantages.
const ADV_SD_FLOOR: f64 = 1e-8;
/// Score assigned without consulting the scorer when a rollout decodes to
/// no words at all.
const EMPTY_RESPONSE_SCORE: u8 = 1;

/// How the 1–5 satisfaction score enters the terminal reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreNormalization {
    /// S itself.
    #[default]
    Raw,
    /// S − 3, so a neutral rating is worth nothing.
    Centered,
}

impl ScoreNormalization {
    pub fn apply(self, score: u8) -> f64 {
        match self {
            Self::Raw => score as f64,
            Self::Centered => score as f64 - 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    /// KL penalty coefficient.
    pub beta: f64,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lam: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub rollouts_per_iter: usize,
    pub iterations: usize,
    /// Learning rate of everything except the value head.
    pub policy_lr: f64,
    /// Learning rate of the value head.
    pub value_lr: f64,
    pub grad_clip_norm: f64,
    pub score_normalization: ScoreNormalization,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            clip_epsilon: 0.2,
            gamma: 1.0,
            lam: 0.95,
            ppo_epochs: 4,
            minibatch_size: 16,
            rollouts_per_iter: 128,
            iterations: 40,
            policy_lr: 3e-5,
            value_lr: 1e-2,
            grad_clip_norm: 1.0,
            score_normalization: ScoreNormalization::Raw,
            max_new_tokens: 32,
            temperature: 1.0,
            top_k: 0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0) {
            return bad("beta must be ≥ 0");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must be in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad("lam must be in [0, 1]");
        }
        if self.ppo_epochs == 0 || self.minibatch_size == 0 || self.rollouts_per_iter == 0 || self.iterations == 0 {
            return bad("ppo_epochs, minibatch_size, rollouts_per_iter and iterations must be >= 1");
        }
        if self.minibatch_size > self.rollouts_per_iter {
            return bad("minibatch_size must not exceed rollouts_per_iter");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("policy_lr and value_lr must be > 0");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be >= 1");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        Ok(())
    }

    fn rollout_decoding(&self, seed: u64) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            top_k: self.top_k,
            max_new_tokens: self.max_new_tokens,
            seed,
        }
    }
}

/// One sampled response with everything PPO needs, aligned per response
/// token (the final EOS included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pair_index: usize,
    pub context: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub response_text: String,
    /// Raw 1–5 satisfaction rating.
    pub satisfaction: u8,
    /// The rating as it enters the reward (after normalization).
    pub score: f64,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub shaped_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Per-iteration summary. Loss figures and the clip fraction describe the
/// final PPO epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub iteration: usize,
    pub mean_score: f64,
    pub mean_kl_per_token: f64,
    pub mean_return: f64,
    pub mean_response_tokens: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Smallest and largest probability ratio seen in the first minibatch of
    /// the first epoch (both 1 unless something drifted).
    pub first_ratio_min: f64,
    pub first_ratio_max: f64,
}

#[derive(Debug, Clone)]
pub struct PpoReport<F: Scalar = f32> {
    pub stats: Vec<TrainStats>,
    pub skipped_pairs: usize,
    /// The frozen reference the KL penalty was measured against.
    pub reference: PolicyModel<F>,
}

/// Per-token rewards: `−β(new_t − ref_t)`, plus the normalized score on the
/// last token.
pub fn shape_rewards(
    score: f64,
    new_logprobs: &[f64],
    ref_logprobs: &[f64],
    beta: f64,
) -> Result<Vec<f64>, TrainError> {
    if new_logprobs.len() != ref_logprobs.len() {
        return Err(TrainError::LengthMismatch(new_logprobs.len(), ref_logprobs.len()));
    }
    if new_logprobs.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut r: Vec<f64> = new_logprobs
        .iter()
        .zip(ref_logprobs)
        .map(|(n, q)| -beta * (n - q))
        .collect();
    if let Some(last) = r.last_mut() {
        *last += score;
    }
    Ok(r)
}

/// Generalized advantage estimation with a zero bootstrap after the last
/// token. Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    if rewards.len() != values.len() {
        return Err(TrainError::LengthMismatch(rewards.len(), values.len()));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lam * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero mean, unit (population) standard deviation, with the deviation
/// floored at 1e-8.
pub fn standardize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(ADV_SD_FLOOR);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

/// Loss terms of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    /// Mean squared error of values against returns.
    pub value_loss: f64,
    /// `policy_loss + 0.5 · value_loss`, the quantity differentiated.
    pub total: f64,
    pub clipped_tokens: usize,
    pub n_tokens: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Clipped-surrogate and value loss of a minibatch, with the gradient of
/// `total`. Advantages are standardized across the minibatch's tokens. The
/// value loss trains only the value head: its gradient does not reach the
/// shared trunk, so the policy is shaped by the surrogate alone.
pub fn ppo_loss_and_grad<F: Scalar>(
    model: &PolicyModel<F>,
    batch: &[&Trajectory],
    clip_epsilon: f64,
) -> Result<(PpoLoss, Vec<F>), TrainError> {
    let mut adv: Vec<f64> = batch.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    let n_tokens = adv.len();
    if n_tokens == 0 {
        return Err(TrainError::NoData);
    }
    standardize_advantages(&mut adv);
    let inv_n = 1.0 / n_tokens as f64;
    let mut grads = vec![F::zero(); model.num_params()];
    let mut loss = PpoLoss {
        policy_loss: 0.0,
        value_loss: 0.0,
        total: 0.0,
        clipped_tokens: 0,
        n_tokens,
        ratio_min: f64::INFINITY,
        ratio_max: f64::NEG_INFINITY,
    };
    let mut k = 0;
    for traj in batch {
        let resp = &traj.response;
        let mut input = traj.context.clone();
        input.extend_from_slice(&resp[..resp.len() - 1]);
        let cache = model.forward_sequence(&input)?;
        let (t_len, v) = cache.logits.dim();
        let mut dlogits = Array2::<F>::zeros((t_len, v));
        let mut dvalues = Array1::<F>::zeros(t_len);
        let start = traj.context.len() - 1;
        for (i, &tok) in resp.iter().enumerate() {
            let pos = start + i;
            let lp = log_softmax(cache.logits.row(pos));
            // clamped exactly as when the old log-probs were recorded
            let new_lp = lp[tok as usize].as_f64().min(0.0);
            let ratio = (new_lp - traj.old_logprobs[i]).exp();
            let a = adv[k];
            k += 1;
            loss.ratio_min = loss.ratio_min.min(ratio);
            loss.ratio_max = loss.ratio_max.max(ratio);
            let clipped_ratio = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
            if (ratio - 1.0).abs() > clip_epsilon {
                loss.clipped_tokens += 1;
            }
            let unclipped = ratio * a;
            let clipped = clipped_ratio * a;
            loss.policy_loss -= unclipped.min(clipped) * inv_n;
            // The gradient flows only when the unclipped term is the active one.
            if unclipped <= clipped {
                let dlp = -a * ratio * inv_n;
                let mut row = dlogits.row_mut(pos);
                for (j, g) in row.iter_mut().enumerate() {
                    let p = lp[j].as_f64().exp();
                    let d = if j == tok as usize { 1.0 - p } else { -p };
                    *g = F::c(dlp * d);
                }
            }
            let value = cache.values[pos].as_f64();
            let err = value - traj.returns[i];
            loss.value_loss += err * err * inv_n;
            dvalues[pos] = F::c(2.0 * VALUE_COEF * err * inv_n);
        }
        model.backward(&cache, &dlogits, &Array1::zeros(t_len), &mut grads);
        model.value_head_backward(&cache, &dvalues, &mut grads);
    }
    loss.total = loss.policy_loss + VALUE_COEF * loss.value_loss;
    if !loss.total.is_finite() {
        return Err(TrainError::NonFinite("ppo loss"));
    }
    Ok((loss, grads))
}

/// Summary of rollout-side quantities.
fn rollout_summary(iteration: usize, trajectories: &[Trajectory]) -> TrainStats {
    let n = trajectories.len().max(1) as f64;
    let tokens: usize = trajectories.iter().map(|t| t.response.len()).sum();
    let kl: f64 = trajectories
        .iter()
        .flat_map(|t| t.old_logprobs.iter().zip(&t.ref_logprobs).map(|(o, r)| o - r))
        .sum();
    TrainStats {
        iteration,
        mean_score: trajectories.iter().map(|t| t.satisfaction as f64).sum::<f64>() / n,
        mean_kl_per_token: if tokens == 0 { 0.0 } else { kl / tokens as f64 },
        mean_return: trajectories.iter().map(|t| t.shaped_rewards.iter().sum::<f64>()).sum::<f64>() / n,
        mean_response_tokens: tokens as f64 / n,
        policy_loss: 0.0,
        value_loss: 0.0,
        clip_fraction: 0.0,
        first_ratio_min: 1.0,
        first_ratio_max: 1.0,
    }
}

/// Several epochs of minibatch updates over one batch of trajectories.
/// Minibatch order is drawn from `rng`.
pub fn ppo_update<F: Scalar>(
    policy: &mut PolicyModel<F>,
    optimizer: &mut AdamW<F>,
    trajectories: &[Trajectory],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats, TrainError> {
    if policy.role() != ModelRole::TrainablePolicy {
        return Err(TrainError::NotTrainable);
    }
    if trajectories.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut stats = rollout_summary(0, trajectories);
    let [vw, vb] = policy.layout().value_head_ranges();
    let lr_of = |i: usize| {
        if vw.contains(&i) || vb.contains(&i) {
            config.value_lr
        } else {
            config.policy_lr
        }
    };
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    for epoch in 0..config.ppo_epochs {
        order.shuffle(rng);
        let (mut pl, mut vl, mut clipped, mut tokens) = (0.0, 0.0, 0, 0);
        for (mb, chunk) in order.chunks(config.minibatch_size).enumerate() {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &trajectories[i]).collect();
            let (loss, mut grads) = ppo_loss_and_grad(policy, &batch, config.clip_epsilon)?;
            if epoch == 0 && mb == 0 {
                stats.first_ratio_min = loss.ratio_min;
                stats.first_ratio_max = loss.ratio_max;
            }
            pl += loss.policy_loss * loss.n_tokens as f64;
            vl += loss.value_loss * loss.n_tokens as f64;
            clipped += loss.clipped_tokens;
            tokens += loss.n_tokens;
            clip_grad_norm(&mut grads, config.grad_clip_norm);
            optimizer.step(policy.params_mut()?, &grads, lr_of);
        }
        if epoch + 1 == config.ppo_epochs {
            stats.policy_loss = pl / tokens as f64;
            stats.value_loss = vl / tokens as f64;
            stats.clip_fraction = clipped as f64 / tokens as f64;
        }
    }
    Ok(stats)
}

fn scorer_error(iteration: usize) -> impl Fn(SimulatorError) -> TrainError {
    move |source| TrainError::Scorer { iteration, source }
}

/// PPO fine-tuning. The reference model is a frozen copy of `policy` taken
/// before the first update. `on_iteration` sees each iteration's stats as
/// they are produced.
pub fn ppo_train<F: Scalar>(
    policy: &mut PolicyModel<F>,
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    scorer: &dyn crate::simulator::ResponseScorer,
    config: &PpoConfig,
    on_iteration: &mut dyn FnMut(&TrainStats),
) -> Result<PpoReport<F>, TrainError> {
    config.validate()?;
    ppo_train_unvalidated(policy, tokenizer, pairs, scorer, config, on_iteration)
}

/// [`ppo_train`] without configuration checks; lets tests run with zero
/// learning rates.
#[doc(hidden)]
pub fn ppo_train_unvalidated<F: Scalar>(
    policy: &mut PolicyModel<F>,
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    scorer: &dyn crate::simulator::ResponseScorer,
    config: &PpoConfig,
    on_iteration: &mut dyn FnMut(&TrainStats),
) -> Result<PpoReport<F>, TrainError> {
    if policy.role() != ModelRole::TrainablePolicy {
        return Err(TrainError::NotTrainable);
    }
    if pairs.is_empty() {
        return Err(TrainError::NoData);
    }
    let max_len = policy.config().max_seq_len;
    let mut contexts = Vec::new();
    let mut skipped_pairs = 0;
    for (i, pair) in pairs.iter().enumerate() {
        match encode_exchange(tokenizer, &pair.history, None, max_len) {
            // leave room for at least one generated token
            Ok((ctx, _)) if ctx.len() < max_len => contexts.push((i, ctx)),
            Ok(_) | Err(_) => {
                log::warn!("skipping exchange {i}: context does not fit the window");
                skipped_pairs += 1;
            }
        }
    }
    if contexts.is_empty() {
        return Err(TrainError::AllPairsSkipped(skipped_pairs));
    }

    let reference = policy.frozen_copy();
    let mut optimizer = AdamW::new(policy.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut all_stats = Vec::with_capacity(config.iterations);

    for iteration in 1..=config.iterations {
        let mut sampled = Vec::with_capacity(config.rollouts_per_iter);
        for _ in 0..config.rollouts_per_iter {
            let (pair_index, ctx) = &contexts[rng.gen_range(0..contexts.len())];
            let decoding = config.rollout_decoding(rng.gen());
            let response = sample_response(policy, ctx, &decoding)?;
            let text = tokenizer.decode_response(&response);
            sampled.push((*pair_index, ctx.clone(), response, text));
        }

        let to_score: Vec<(&ExchangePair, &str)> = sampled
            .iter()
            .filter(|s| !s.3.is_empty())
            .map(|s| (&pairs[s.0], s.3.as_str()))
            .collect();
        let mut judged = scorer.score_batch(&to_score).into_iter();

        let mut trajectories = Vec::with_capacity(sampled.len());
        for (pair_index, context, response, response_text) in sampled {
            let satisfaction = if response_text.is_empty() {
                EMPTY_RESPONSE_SCORE
            } else {
                judged
                    .next()
                    .expect("one judgment per scored response")
                    .map_err(scorer_error(iteration))?
                    .score
            };
            let old = sequence_log_prob(policy, &context, &response)?;
            let reference_scores = sequence_log_prob(&reference, &context, &response)?;
            let score = config.score_normalization.apply(satisfaction);
            let shaped_rewards = shape_rewards(
                score,
                &old.per_token_logprob,
                &reference_scores.per_token_logprob,
                config.beta,
            )?;
            let (advantages, returns) =
                compute_advantages(&shaped_rewards, &old.per_token_value, config.gamma, config.lam)?;
            trajectories.push(Trajectory {
                pair_index,
                context,
                response,
                response_text,
                satisfaction,
                score,
                old_logprobs: old.per_token_logprob,
                ref_logprobs: reference_scores.per_token_logprob,
                values: old.per_token_value,
                shaped_rewards,
                advantages,
                returns,
            });
        }

        let mut stats = ppo_update(policy, &mut optimizer, &trajectories, config, &mut rng)?;
        stats.iteration = iteration;
        log::debug!(
            "ppo iteration {iteration}: mean score {:.3}, kl/token {:.4}, clip {:.3}",
            stats.mean_score,
            stats.mean_kl_per_token,
            stats.clip_fraction
        );
        on_iteration(&stats);
        all_stats.push(stats);
    }
    Ok(PpoReport {
        stats: all_stats,
        skipped_pairs,
        reference,
    })
}

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::log_softmax;
use super::tokenizer::{TokenId, EOS};
use super::{PolicyError, PolicyModel, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    /// 0 disables top-k truncation.
    pub top_k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(PolicyError::InvalidDecoding("temperature must be > 0".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(PolicyError::InvalidDecoding("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic argmax decoding.
pub fn greedy_decoding(max_new_tokens: usize) -> DecodingParams {
    DecodingParams {
        temperature: 1.0,
        top_k: 1,
        max_new_tokens,
        seed: 0,
    }
}

/// Teacher-forced scores of a response, aligned with `response_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub response_ids: Vec<TokenId>,
    pub per_token_logprob: Vec<f64>,
    pub total_logprob: f64,
    pub per_token_value: Vec<f64>,
}

/// Concatenation fed to the model when scoring `response` after `context`:
/// the final response token is predicted, never consumed.
pub(crate) fn teacher_forced_input(context: &[TokenId], response: &[TokenId]) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(context.len() + response.len());
    ids.extend_from_slice(context);
    ids.extend_from_slice(&response[..response.len() - 1]);
    ids
}

pub fn sequence_log_prob<F: Scalar>(
    model: &PolicyModel<F>,
    context: &[TokenId],
    response: &[TokenId],
) -> Result<SequenceScore, PolicyError> {
    if response.last() != Some(&EOS) {
        return Err(PolicyError::MissingEos);
    }
    if context.is_empty() {
        return Err(PolicyError::EmptySequence);
    }
    let input = teacher_forced_input(context, response);
    let cache = model.forward_sequence(&input)?;
    if let Some(&bad) = response
        .iter()
        .find(|&&i| i as usize >= model.config().vocab_size)
    {
        return Err(PolicyError::TokenOutOfRange {
            id: bad,
            vocab: model.config().vocab_size,
        });
    }
    let start = context.len() - 1;
    let mut per_token_logprob = Vec::with_capacity(response.len());
    let mut per_token_value = Vec::with_capacity(response.len());
    for (i, &tok) in response.iter().enumerate() {
        let lp = log_softmax(cache.logits.row(start + i));
        per_token_logprob.push(lp[tok as usize].as_f64().min(0.0));
        per_token_value.push(cache.values[start + i].as_f64());
    }
    Ok(SequenceScore {
        response_ids: response.to_vec(),
        total_logprob: per_token_logprob.iter().sum(),
        per_token_logprob,
        per_token_value,
    })
}

/// Samples from the temperature-scaled, top-k truncated distribution given
/// raw logits.
fn draw<F: Scalar>(logits: &Array1<F>, decoding: &DecodingParams, rng: &mut ChaCha8Rng) -> TokenId {
    let scaled: Vec<f64> = logits.iter().map(|&z| z.as_f64() / decoding.temperature).collect();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    if decoding.top_k > 0 && decoding.top_k < scaled.len() {
        // stable: ties keep the lower id first
        order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
        order.truncate(decoding.top_k);
    }
    if order.len() == 1 {
        return order[0] as TokenId;
    }
    let max = order.iter().map(|&i| scaled[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = order.iter().map(|&i| (scaled[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return i as TokenId;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary") as TokenId
}

/// Autoregressive sampling with a key/value cache. Stops at EOS or after
/// `max_new_tokens` (or when the context window is full), appending EOS when
/// truncated.
pub fn sample_response<F: Scalar>(
    model: &PolicyModel<F>,
    context: &[TokenId],
    decoding: &DecodingParams,
) -> Result<Vec<TokenId>, PolicyError> {
    decoding.validate()?;
    let prefill = model.forward_sequence(context)?;
    let c = model.config();
    let budget = decoding
        .max_new_tokens
        .min(c.max_seq_len.saturating_sub(context.len()));
    if budget == 0 {
        return Ok(vec![EOS]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(decoding.seed);

    let mut kv: Vec<_> = (0..c.n_layers)
        .map(|l| {
            let (k, v) = prefill.key_values(l, c.d_model);
            (
                k.rows().into_iter().map(|r| r.to_owned()).collect::<Vec<_>>(),
                v.rows().into_iter().map(|r| r.to_owned()).collect::<Vec<_>>(),
            )
        })
        .collect();
    let mut logits = prefill.logits.row(context.len() - 1).to_owned();
    let mut out = Vec::new();
    loop {
        let tok = draw(&logits, decoding, &mut rng);
        out.push(tok);
        if tok == EOS {
            break;
        }
        if out.len() >= budget {
            out.push(EOS);
            break;
        }
        logits = model.step(tok, context.len() + out.len() - 1, &mut kv);
    }
    Ok(out)
}

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{ExchangePair, Turn};
use crate::policy::{encode_exchange, greedy_decoding, sample_response, DecodingParams, PolicyModel, Scalar, Tokenizer};
use crate::simulator::ResponseScorer;

/// Decodes a response for `history` and returns its text.
pub fn generate_response<F: Scalar>(
    policy: &PolicyModel<F>,
    tokenizer: &Tokenizer,
    history: &[Turn],
    decoding: &DecodingParams,
) -> Result<String, TrainError> {
    let (ctx, _) = encode_exchange(tokenizer, history, None, policy.config().max_seq_len)?;
    let ids = sample_response(policy, &ctx, decoding)?;
    Ok(tokenizer.decode_response(&ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_score: f64,
    pub scores: Vec<u8>,
    pub responses: Vec<String>,
    /// Exchanges whose context did not fit the window.
    pub skipped: usize,
}

/// Greedy generation on held-out exchanges, rated by `scorer`. Empty
/// responses receive the minimum score without consulting the scorer.
pub fn evaluate_policy<F: Scalar>(
    policy: &PolicyModel<F>,
    tokenizer: &Tokenizer,
    pairs: &[ExchangePair],
    scorer: &dyn ResponseScorer,
    max_new_tokens: usize,
) -> Result<EvalReport, TrainError> {
    let decoding = greedy_decoding(max_new_tokens);
    let max_len = policy.config().max_seq_len;
    let mut kept = Vec::new();
    let mut responses = Vec::new();
    let mut skipped = 0;
    for pair in pairs {
        match encode_exchange(tokenizer, &pair.history, None, max_len) {
            Ok((ctx, _)) if ctx.len() < max_len => {
                let ids = sample_response(policy, &ctx, &decoding)?;
                kept.push(pair);
                responses.push(tokenizer.decode_response(&ids));
            }
            _ => skipped += 1,
        }
    }
    if kept.is_empty() {
        return Err(TrainError::NoData);
    }
    let items: Vec<(&ExchangePair, &str)> = kept
        .iter()
        .zip(&responses)
        .filter(|(_, r)| !r.is_empty())
        .map(|(p, r)| (*p, r.as_str()))
        .collect();
    let mut judged = scorer.score_batch(&items).into_iter();
    let mut scores = Vec::with_capacity(responses.len());
    for r in &responses {
        if r.is_empty() {
            scores.push(1);
        } else {
            let j = judged.next().expect("one judgment per response").map_err(TrainError::EvalScorer)?;
            scores.push(j.score);
        }
    }
    Ok(EvalReport {
        mean_score: scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64,
        scores,
        responses,
        skipped,
    })
}

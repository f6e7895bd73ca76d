//! The user simulator: prompts a scoring backend with the dialogue so far
//! plus a candidate system response and extracts a 1–5 satisfaction score
//! with its explanation. Also hosts the scripted offline oracle, candidate
//! reranking and simulator evaluation.

mod cache;
mod client;
mod parse;
mod prompt;
mod scripted;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheRecord, ResponseCache};
pub use client::{
    extract_completion_text, HttpChatClient, ReplayClient, ScoringDecoding, SimulatorClient,
    TransportError,
};
pub use parse::parse_simulator_output;
pub use prompt::{
    build_prompt, select_few_shot, FewShotExample, PromptSpec, EXPLANATION_SLOT, MAX_SHOTS, SCORE_SLOT,
};
pub use scripted::scripted_score;

use crate::corpus::{ExchangePair, Turn};
use crate::metrics::{classification_report, ClassificationReport, MetricsError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionJudgment {
    pub score: u8,
    pub explanation: String,
    pub raw_text: String,
}

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("no score found")]
    NoScoreFound,
    #[error("score {0} outside 1-5")]
    ScoreOutOfRange(i64),
    #[error("non-integer score {0}")]
    NonIntegerScore(String),
    #[error("k={k} exceeds the maximum of 6 shots")]
    TooManyShots { k: usize },
    #[error("k={k} exceeds pool size {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("invalid prompt spec: {0}")]
    InvalidPromptSpec(String),
    #[error("history must be non-empty and end with a user turn")]
    InvalidHistory,
    #[error("response is empty")]
    EmptyResponse,
    #[error("required_keywords is empty")]
    EmptyKeywords,
    #[error("target turn carries no required_keywords")]
    MissingKeywords,
    #[error("empty candidate list")]
    NoCandidates,
    #[error("backend failed after {attempts} attempts: {source}")]
    Transport {
        attempts: usize,
        #[source]
        source: TransportError,
    },
    #[error("could not parse a score after {attempts} completions; last output: {last_output:?}")]
    ParseFailure { attempts: usize, last_output: String },
    #[error("cache error: {0}")]
    Cache(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Bounded retry behaviour of [`Simulator::score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub transport_attempts: usize,
    pub parse_attempts: usize,
    /// Delay before the second transport attempt; doubles on each retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            transport_attempts: 3,
            parse_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Counters observable after a run (e.g. recorded in manifests).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatorStats {
    pub backend_calls: u64,
    pub network_requests: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

/// A scoring backend with its prompt configuration, few-shot examples and
/// response cache.
pub struct Simulator {
    client: Arc<dyn SimulatorClient>,
    cache: Arc<ResponseCache>,
    spec: PromptSpec,
    shots: Vec<FewShotExample>,
    decoding: ScoringDecoding,
    retry: RetryPolicy,
    max_in_flight: usize,
    backend_calls: AtomicU64,
}

impl Simulator {
    pub fn new(
        client: Arc<dyn SimulatorClient>,
        cache: Arc<ResponseCache>,
        spec: PromptSpec,
        shots: Vec<FewShotExample>,
    ) -> Result<Self, SimulatorError> {
        spec.validate()?;
        Ok(Self {
            client,
            cache,
            spec,
            shots,
            decoding: ScoringDecoding::default(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            backend_calls: AtomicU64::new(0),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_decoding(mut self, decoding: ScoringDecoding) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn stats(&self) -> SimulatorStats {
        SimulatorStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            network_requests: self.client.request_count(),
            cache_hits: self.cache.hits(),
            cache_misses: self.cache.misses(),
        }
    }

    fn complete_with_backoff(&self, prompt: &str, decoding: &ScoringDecoding) -> Result<String, SimulatorError> {
        let attempts = self.retry.transport_attempts.max(1);
        let mut delay = self.retry.base_delay;
        for attempt in 1..=attempts {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.client.complete(prompt, decoding) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    log::warn!("scoring backend attempt {attempt} failed: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(source) => return Err(SimulatorError::Transport { attempts: attempt, source }),
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    /// Builds the prompt, consults the cache, queries the backend on a miss
    /// and parses the output. Unparseable outputs are re-queried with the
    /// decoding seed incremented; only parseable outputs are cached.
    pub fn score(&self, history: &[Turn], response: &str) -> Result<SatisfactionJudgment, SimulatorError> {
        let prompt = build_prompt(&self.spec, &self.shots, history, response)?;
        let identity = self.client.identity();
        let mut last_output = String::new();
        let attempts = self.retry.parse_attempts.max(1);
        for attempt in 0..attempts {
            let decoding = ScoringDecoding {
                seed: self.decoding.seed + attempt as u64,
                ..self.decoding
            };
            let key = cache_key(&identity, &prompt, &decoding);
            if let Some(text) = self.cache.get(&key) {
                if let Ok(j) = parse_simulator_output(&text) {
                    return Ok(j);
                }
            }
            let text = self.complete_with_backoff(&prompt, &decoding)?;
            match parse_simulator_output(&text) {
                Ok(j) => {
                    self.cache.insert(CacheRecord {
                        key_hash: key,
                        prompt: prompt.clone(),
                        decoding,
                        raw_text: text,
                        backend_id: identity.clone(),
                        timestamp: chrono::Utc::now().to_rfc3339(),
                    })?;
                    return Ok(j);
                }
                Err(e) => {
                    log::warn!("unparseable scorer output on attempt {}: {e}", attempt + 1);
                    last_output = text;
                }
            }
        }
        Err(SimulatorError::ParseFailure { attempts, last_output })
    }

    /// Scores many (history, response) items with at most `max_in_flight`
    /// concurrent backend requests. Results keep input order.
    pub fn score_many(&self, items: &[(Vec<Turn>, String)]) -> Vec<Result<SatisfactionJudgment, SimulatorError>> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<SatisfactionJudgment, SimulatorError>>>> =
            Mutex::new((0..items.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..self.max_in_flight.min(items.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let (h, r) = &items[i];
                    let out = self.score(h, r);
                    results.lock().expect("results lock")[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every item scored"))
            .collect()
    }
}

/// Free-function form: scores one response with a fresh in-memory cache.
pub fn score_response(
    client: Arc<dyn SimulatorClient>,
    spec: &PromptSpec,
    shots: &[FewShotExample],
    history: &[Turn],
    response: &str,
) -> Result<SatisfactionJudgment, SimulatorError> {
    Simulator::new(client, Arc::new(ResponseCache::in_memory()), spec.clone(), shots.to_vec())?
        .score(history, response)
}

/// Anything that can rate a sampled response for an exchange. Implementations
/// see the history and may use target-side annotations (the scripted
/// oracle's keywords) but never the gold response text.
pub trait ResponseScorer: Send + Sync {
    fn score(&self, pair: &ExchangePair, response: &str) -> Result<SatisfactionJudgment, SimulatorError>;

    /// Scores many responses; results keep input order. The default is
    /// sequential.
    fn score_batch(&self, items: &[(&ExchangePair, &str)]) -> Vec<Result<SatisfactionJudgment, SimulatorError>> {
        items.iter().map(|(p, r)| self.score(p, r)).collect()
    }
}

/// The scripted keyword-coverage oracle as a [`ResponseScorer`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedScorer;

impl ResponseScorer for ScriptedScorer {
    fn score(&self, pair: &ExchangePair, response: &str) -> Result<SatisfactionJudgment, SimulatorError> {
        let keywords = pair
            .target
            .required_keywords
            .as_deref()
            .ok_or(SimulatorError::MissingKeywords)?;
        scripted_score(&pair.history, response, keywords)
    }
}

impl ResponseScorer for Simulator {
    fn score(&self, pair: &ExchangePair, response: &str) -> Result<SatisfactionJudgment, SimulatorError> {
        Simulator::score(self, &pair.history, response)
    }

    fn score_batch(&self, items: &[(&ExchangePair, &str)]) -> Vec<Result<SatisfactionJudgment, SimulatorError>> {
        let owned: Vec<(Vec<Turn>, String)> =
            items.iter().map(|(p, r)| (p.history.clone(), r.to_string())).collect();
        self.score_many(&owned)
    }
}

/// Index of the highest-scored candidate; ties go to the lowest index.
pub fn rerank_candidates(
    judgments: &[SatisfactionJudgment],
) -> Result<(usize, SatisfactionJudgment), SimulatorError> {
    let mut best: Option<usize> = None;
    for (i, j) in judgments.iter().enumerate() {
        if best.map_or(true, |b| j.score > judgments[b].score) {
            best = Some(i);
        }
    }
    let b = best.ok_or(SimulatorError::NoCandidates)?;
    Ok((b, judgments[b].clone()))
}

pub fn evaluate_simulator(predictions: &[u8], golds: &[u8]) -> Result<ClassificationReport, SimulatorError> {
    Ok(classification_report(predictions, golds)?)
}

//! Word-level tokenizer with fixed special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PolicyError;
use crate::corpus::{Corpus, Speaker, Turn};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const USR: TokenId = 4;
pub const SYS: TokenId = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["<pad>", "<unk>", "<bos>", "<eos>", "<usr>", "<sys>"];

/// Lowercase split on whitespace with every punctuation character as its
/// own token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Serialize for Tokenizer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tokenizer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Tokenizer::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

impl Tokenizer {
    /// Builds from a full token list whose first entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b)
        {
            return Err(PolicyError::InvalidTokenizer(
                "special tokens missing or out of order".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(PolicyError::InvalidTokenizer(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined token strings; specials render as their markers.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Response text: tokens up to the first EOS, specials dropped.
    pub fn decode_response(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i as usize >= SPECIAL_TOKENS.len())
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Counts word frequencies over every turn; keeps tokens with frequency at
/// least `min_freq`, most frequent first (ties lexicographic), capped so the
/// full vocabulary including specials has at most `max_vocab` entries.
pub fn build_tokenizer(
    corpus: &Corpus,
    max_vocab: usize,
    min_freq: usize,
) -> Result<Tokenizer, PolicyError> {
    if corpus.is_empty() {
        return Err(PolicyError::EmptyCorpus);
    }
    if max_vocab < SPECIAL_TOKENS.len() + 1 {
        return Err(PolicyError::VocabTooSmall(max_vocab));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for turn in corpus.dialogues.iter().flat_map(|d| d.turns.iter()) {
        for w in word_tokens(&turn.text) {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(w, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_vocab - SPECIAL_TOKENS.len());

    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Tokenizer::from_tokens(tokens)
}

/// Encodes `BOS (USR|SYS tokens…)* SYS` and, when given, `target tokens EOS`.
/// The combined teacher-forced length must fit `max_seq_len`.
pub fn encode_exchange(
    tokenizer: &Tokenizer,
    history: &[Turn],
    target: Option<&str>,
    max_seq_len: usize,
) -> Result<(Vec<TokenId>, Option<Vec<TokenId>>), PolicyError> {
    if history.is_empty() {
        return Err(PolicyError::EmptyHistory);
    }
    let mut context = vec![BOS];
    for turn in history {
        context.push(match turn.speaker {
            Speaker::User => USR,
            Speaker::System => SYS,
        });
        context.extend(tokenizer.encode(&turn.text));
    }
    context.push(SYS);
    let target_ids = target.map(|t| {
        let mut ids = tokenizer.encode(t);
        ids.push(EOS);
        ids
    });
    // teacher forcing feeds every target token but the last
    let len = context.len() + target_ids.as_ref().map_or(0, |t| t.len() - 1);
    if len > max_seq_len {
        return Err(PolicyError::SequenceTooLong {
            len,
            max: max_seq_len,
        });
    }
    Ok((context, target_ids))
}

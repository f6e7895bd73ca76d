//! Dialogue data model, JSONL ingestion, deterministic splitting and the
//! synthetic booking-task corpus generator.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => f.write_str("User"),
            Speaker::System => f.write_str("System"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfaction: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_keywords: Option<Vec<String>>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            satisfaction: None,
            required_keywords: None,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
            satisfaction: None,
            required_keywords: None,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidDialogue> {
        if self.text.trim().is_empty() {
            return Err(InvalidDialogue::EmptyText);
        }
        if let Some(s) = self.satisfaction {
            if !(1..=5).contains(&s) {
                return Err(InvalidDialogue::SatisfactionOutOfRange(s as i64));
            }
            if self.speaker != Speaker::System {
                return Err(InvalidDialogue::SatisfactionOnUserTurn);
            }
        }
        if let Some(kw) = &self.required_keywords {
            if kw.is_empty() {
                return Err(InvalidDialogue::EmptyKeywords);
            }
            if self.speaker != Speaker::System {
                return Err(InvalidDialogue::KeywordsOnUserTurn);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dialogue {
    pub id: String,
    pub domain: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<(), InvalidDialogue> {
        for (i, turn) in self.turns.iter().enumerate() {
            turn.validate()?;
            let expected = if i % 2 == 0 {
                Speaker::User
            } else {
                Speaker::System
            };
            if turn.speaker != expected {
                return Err(InvalidDialogue::NonAlternating(i));
            }
        }
        if !self.turns.iter().any(|t| t.speaker == Speaker::System) {
            return Err(InvalidDialogue::NoSystemTurn);
        }
        Ok(())
    }

    /// Indices of every system turn, in order.
    pub fn system_turn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::System)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub source: CorpusSource,
}

/// One (history, gold response) pair: the `x` and `y*` of supervised training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePair {
    pub history: Vec<Turn>,
    pub target: Turn,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidDialogue {
    #[error("empty text")]
    EmptyText,
    #[error("satisfaction out of range: {0}")]
    SatisfactionOutOfRange(i64),
    #[error("satisfaction on a user turn")]
    SatisfactionOnUserTurn,
    #[error("required_keywords must be non-empty")]
    EmptyKeywords,
    #[error("required_keywords on a user turn")]
    KeywordsOnUserTurn,
    #[error("turns do not alternate starting with user (turn {0})")]
    NonAlternating(usize),
    #[error("dialogue has no system turn")]
    NoSystemTurn,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidLine {
        line: usize,
        #[source]
        source: InvalidDialogue,
    },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("target index {index} out of bounds for {len} turns")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("target is a user turn (index {0})")]
    TargetIsUserTurn(usize),
    #[error("ratios must sum to 1 (got {0})")]
    RatiosDoNotSumToOne(f64),
    #[error("ratios must be non-negative")]
    NegativeRatio,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n_dialogues must be at least 1")]
    ZeroDialogues,
}

/// Raw turn shape used during ingestion so that range errors carry the
/// offending value instead of a serde overflow message.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    speaker: String,
    text: String,
    #[serde(default)]
    satisfaction: Option<i64>,
    #[serde(default)]
    required_keywords: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialogue {
    id: String,
    domain: String,
    turns: Vec<RawTurn>,
}

fn convert_raw(raw: RawDialogue, line: usize) -> Result<Dialogue, CorpusError> {
    let mut turns = Vec::with_capacity(raw.turns.len());
    for t in raw.turns {
        let speaker = match t.speaker.as_str() {
            "user" => Speaker::User,
            "system" => Speaker::System,
            other => {
                return Err(CorpusError::MalformedLine {
                    line,
                    message: format!("invalid speaker value {other:?}"),
                })
            }
        };
        let satisfaction = match t.satisfaction {
            None => None,
            Some(s) if (1..=5).contains(&s) => Some(s as u8),
            Some(s) => {
                return Err(CorpusError::InvalidLine {
                    line,
                    source: InvalidDialogue::SatisfactionOutOfRange(s),
                })
            }
        };
        turns.push(Turn {
            speaker,
            text: t.text,
            satisfaction,
            required_keywords: t.required_keywords,
        });
    }
    let dialogue = Dialogue {
        id: raw.id,
        domain: raw.domain,
        turns,
    };
    dialogue
        .validate()
        .map_err(|source| CorpusError::InvalidLine { line, source })?;
    Ok(dialogue)
}

/// Parses JSONL text, one dialogue per non-blank line. Line numbers in errors
/// are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())), "<memory>")
}

fn parse_lines<I>(lines: I, path: &str) -> Result<Corpus, CorpusError>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut dialogues = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDialogue =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let dialogue = convert_raw(raw, line_no)?;
        if !seen.insert(dialogue.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: dialogue.id,
            });
        }
        dialogues.push(dialogue);
    }
    let synthetic = dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .any(|t| t.required_keywords.is_some());
    Ok(Corpus {
        dialogues,
        source: if synthetic {
            CorpusSource::Synthetic
        } else {
            CorpusSource::Real
        },
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    parse_lines(BufReader::new(file).lines(), &display)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    /// Serializes to JSONL with a trailing newline after every dialogue.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    /// Every (history, system turn) exchange in corpus order.
    pub fn exchange_pairs(&self) -> Vec<ExchangePair> {
        self.dialogues
            .iter()
            .flat_map(|d| {
                d.system_turn_indices()
                    .map(move |i| build_history(d, i).expect("system turn index is valid"))
            })
            .collect()
    }
}

pub fn build_history(dialogue: &Dialogue, target_index: usize) -> Result<ExchangePair, CorpusError> {
    let len = dialogue.turns.len();
    let target = dialogue
        .turns
        .get(target_index)
        .ok_or(CorpusError::IndexOutOfBounds {
            index: target_index,
            len,
        })?;
    if target.speaker != Speaker::System {
        return Err(CorpusError::TargetIsUserTurn(target_index));
    }
    Ok(ExchangePair {
        history: dialogue.turns[..target_index].to_vec(),
        target: target.clone(),
    })
}

/// Split fractions in (train, dev, test) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

/// Seeded shuffle then partition into (train, dev, test). Dev and test sizes
/// are floored; train takes the remainder.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    if ratios.train < 0.0 || ratios.dev < 0.0 || ratios.test < 0.0 {
        return Err(CorpusError::NegativeRatio);
    }
    let total = ratios.train + ratios.dev + ratios.test;
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::RatiosDoNotSumToOne(total));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len();
    let n_dev = (n as f64 * ratios.dev).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &[usize]| Corpus {
        dialogues: idx.iter().map(|&i| corpus.dialogues[i].clone()).collect(),
        source: corpus.source,
    };
    let dev = take(&order[..n_dev]);
    let test = take(&order[n_dev..n_dev + n_test]);
    let train = take(&order[n_dev + n_test..]);
    Ok((train, dev, test))
}

// Synthetic booking grammar. Slot values never occur as substrings of
// template words or of each other, so keyword coverage is unambiguous.

struct Slot {
    name: &'static str,
    values: &'static [&'static str],
    user_phrases: &'static [&'static str],
    system_phrases: &'static [&'static str],
}

const FOODS: &[&str] = &[
    "thai", "italian", "chinese", "indian", "french", "korean", "spanish", "greek", "turkish",
    "mexican", "japanese", "lebanese",
];
const AREAS: &[&str] = &["north", "south", "centre", "riverside", "airport"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const DAYS: &[&str] = &[
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const PEOPLE: &[&str] = &["2", "3", "4", "5", "6", "7", "8"];
const GRADES: &[&str] = &["luxury", "standard", "budget", "boutique"];
const CITIES: &[&str] = &[
    "cambridge", "london", "norwich", "stevenage", "peterborough", "leicester", "birmingham",
    "oxford", "bristol", "york",
];

const RESTAURANT_SLOTS: &[Slot] = &[
    Slot {
        name: "food",
        values: FOODS,
        user_phrases: &["serving {} food", "that does {} food", "with {} cuisine"],
        system_phrases: &["{} food", "{} cuisine"],
    },
    Slot {
        name: "area",
        values: AREAS,
        user_phrases: &["in the {} area", "near the {}", "located {}"],
        system_phrases: &["in the {}", "at the {}"],
    },
    Slot {
        name: "price",
        values: PRICES,
        user_phrases: &["in the {} price range", "that is {}"],
        system_phrases: &["{} price", "a {} option"],
    },
    Slot {
        name: "people",
        values: PEOPLE,
        user_phrases: &["for {} people", "a table for {}"],
        system_phrases: &["for {} people", "party of {}"],
    },
    Slot {
        name: "day",
        values: DAYS,
        user_phrases: &["on {}", "for {}"],
        system_phrases: &["on {}", "booked {}"],
    },
];

const HOTEL_SLOTS: &[Slot] = &[
    Slot {
        name: "area",
        values: AREAS,
        user_phrases: &["in the {} area", "near the {}"],
        system_phrases: &["in the {}", "at the {}"],
    },
    Slot {
        name: "price",
        values: PRICES,
        user_phrases: &["in the {} price range", "that is {}"],
        system_phrases: &["{} price", "a {} option"],
    },
    Slot {
        name: "grade",
        values: GRADES,
        user_phrases: &["something {}", "of the {} kind"],
        system_phrases: &["a {} place", "{} grade"],
    },
    Slot {
        name: "people",
        values: PEOPLE,
        user_phrases: &["for {} guests", "for {} people"],
        system_phrases: &["for {} guests", "room for {}"],
    },
    Slot {
        name: "day",
        values: DAYS,
        user_phrases: &["from {}", "arriving {}"],
        system_phrases: &["from {}", "starting {}"],
    },
];

const TRAIN_SLOTS: &[Slot] = &[
    Slot {
        name: "departure",
        values: CITIES,
        user_phrases: &["leaving from {}", "departing {}"],
        system_phrases: &["from {}", "departing {}"],
    },
    Slot {
        name: "destination",
        values: CITIES,
        user_phrases: &["going to {}", "arriving at {}"],
        system_phrases: &["to {}", "arriving {}"],
    },
    Slot {
        name: "day",
        values: DAYS,
        user_phrases: &["on {}", "for {}"],
        system_phrases: &["on {}", "for {}"],
    },
    Slot {
        name: "people",
        values: PEOPLE,
        user_phrases: &["for {} people", "with {} tickets"],
        system_phrases: &["for {} people", "{} tickets"],
    },
];

const OPENERS: &[&str] = &["i need a {d}", "i am looking for a {d}", "can you find me a {d}"];
const FOLLOW_UPS: &[&str] = &["also", "and it should be", "one more thing ,"];
const CONFIRMATIONS: &[&str] = &[
    "i found a {d}",
    "there is a {d} available",
    "sure , i have a {d}",
];
const CLOSERS: &[&str] = &["anything else ?", "shall i book it ?", "is that all ?"];

fn domain_slots(domain: &str) -> &'static [Slot] {
    match domain {
        "restaurant" => RESTAURANT_SLOTS,
        "hotel" => HOTEL_SLOTS,
        _ => TRAIN_SLOTS,
    }
}

fn phrase(template: &str, value: &str) -> String {
    template.replace("{}", value)
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn synthetic_dialogue<R: Rng>(rng: &mut R, index: usize) -> Dialogue {
    let domain = ["restaurant", "hotel", "train"][rng.gen_range(0..3)];
    let slots = domain_slots(domain);

    let mut slot_order: Vec<usize> = (0..slots.len()).collect();
    slot_order.shuffle(rng);
    let total = rng.gen_range(2..=4usize).min(slots.len());
    let chosen = &slot_order[..total];

    let mut values: Vec<&'static str> = Vec::with_capacity(total);
    for &s in chosen {
        let mut v = pick(rng, slots[s].values);
        // departure and destination draw from the same city list
        while values.contains(&v) {
            v = pick(rng, slots[s].values);
        }
        values.push(v);
    }

    // Requests may be split over two user turns when at least 3 slots are
    // requested; the first confirmation then covers only the first batch.
    let first_batch = if total >= 3 && rng.gen_bool(0.5) {
        2
    } else {
        total
    };

    let user_clause = |rng: &mut R, k: usize| phrase(pick(rng, slots[chosen[k]].user_phrases), values[k]);
    let system_clause =
        |rng: &mut R, k: usize| phrase(pick(rng, slots[chosen[k]].system_phrases), values[k]);

    let mut turns = Vec::new();
    let opener = pick(rng, OPENERS).replace("{d}", domain);
    let clauses: Vec<String> = (0..first_batch).map(|k| user_clause(rng, k)).collect();
    turns.push(Turn::user(format!("{opener} {} .", clauses.join(" "))));

    let confirm = |rng: &mut R, upto: usize| {
        let mut order: Vec<usize> = (0..upto).collect();
        order.shuffle(rng);
        let parts: Vec<String> = order.iter().map(|&k| system_clause(rng, k)).collect();
        let head = pick(rng, CONFIRMATIONS).replace("{d}", domain);
        let closer = pick(rng, CLOSERS);
        let mut turn = Turn::system(format!("{head} {} . {closer}", parts.join(" , ")));
        turn.required_keywords = Some(values[..upto].iter().map(|v| v.to_string()).collect());
        turn
    };
    turns.push(confirm(rng, first_batch));

    if first_batch < total {
        let more: Vec<String> = (first_batch..total).map(|k| user_clause(rng, k)).collect();
        turns.push(Turn::user(format!(
            "{} {} .",
            pick(rng, FOLLOW_UPS),
            more.join(" ")
        )));
        turns.push(confirm(rng, total));
    }

    Dialogue {
        id: format!("syn-{index:05}"),
        domain: domain.to_string(),
        turns,
    }
}

/// Generates `n_dialogues` booking dialogues. Output is a pure function of
/// `(n_dialogues, seed)`.
pub fn generate_synthetic_corpus(n_dialogues: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n_dialogues == 0 {
        return Err(CorpusError::ZeroDialogues);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialogues = (0..n_dialogues)
        .map(|i| synthetic_dialogue(&mut rng, i))
        .collect();
    Ok(Corpus {
        dialogues,
        source: CorpusSource::Synthetic,
    })
}

/// All slot values the synthetic grammar can emit.
pub fn synthetic_slot_values() -> Vec<&'static str> {
    let mut all: Vec<&'static str> = [RESTAURANT_SLOTS, HOTEL_SLOTS, TRAIN_SLOTS]
        .iter()
        .flat_map(|slots| slots.iter().flat_map(|s| s.values.iter().copied()))
        .collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Every fixed word the synthetic templates can emit (slot values excluded).
pub fn synthetic_template_words() -> Vec<String> {
    let mut texts: Vec<&str> = Vec::new();
    for slots in [RESTAURANT_SLOTS, HOTEL_SLOTS, TRAIN_SLOTS] {
        for s in slots {
            texts.extend(s.user_phrases);
            texts.extend(s.system_phrases);
            let _ = s.name;
        }
    }
    texts.extend(OPENERS);
    texts.extend(FOLLOW_UPS);
    texts.extend(CONFIRMATIONS);
    texts.extend(CLOSERS);
    texts.extend(["restaurant", "hotel", "train"]);
    let mut words: Vec<String> = texts
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| *w != "{}" && *w != "{d}")
        .map(str::to_string)
        .collect();
    words.sort();
    words.dedup();
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"d1","domain":"hotel","turns":[{"speaker":"user","text":"hi"},{"speaker":"system","text":"hello"}]}"#;

    #[test]
    fn parses_single_line() {
        let c = parse_corpus(LINE).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.dialogues[0].turns.len(), 2);
        assert_eq!(c.source, CorpusSource::Real);
    }

    #[test]
    fn satisfaction_out_of_range_reports_line() {
        let bad = LINE
            .replace(r#""text":"hello""#, r#""text":"hello","satisfaction":7"#)
            .replace("d1", "d2");
        let text = format!("{LINE}\n{bad}\n");
        let err = parse_corpus(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("satisfaction out of range"), "{msg}");
    }

    #[test]
    fn two_lines_keep_order() {
        let second = LINE.replace("d1", "d0");
        let c = parse_corpus(&format!("{LINE}\n{second}\n")).unwrap();
        let ids: Vec<_> = c.dialogues.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["d1", "d0"]);
    }

    #[test]
    fn ingestion_errors() {
        let cases = [
            ("{not json", "malformed JSON"),
            (&LINE.replace(r#""speaker":"user""#, r#""speaker":"bot""#), "invalid speaker"),
            (&LINE.replace(r#""text":"hi""#, r#""text":"   ""#), "empty text"),
            (
                &LINE.replace(r#""speaker":"user","text":"hi""#, r#""speaker":"system","text":"hi""#),
                "alternate",
            ),
            (&format!("{LINE}\n{LINE}"), "duplicate dialogue id"),
        ];
        for (text, needle) in cases {
            let msg = parse_corpus(text).unwrap_err().to_string();
            assert!(msg.contains(needle), "{msg} should mention {needle}");
        }
    }

    fn four_turns() -> Dialogue {
        Dialogue {
            id: "x".into(),
            domain: "hotel".into(),
            turns: vec![
                Turn::user("u1"),
                Turn::system("s1"),
                Turn::user("u2"),
                Turn::system("s2"),
            ],
        }
    }

    #[test]
    fn history_building() {
        let d = four_turns();
        let pair = build_history(&d, 3).unwrap();
        assert_eq!(pair.history.len(), 3);
        assert_eq!(pair.history[2].text, "u2");
        assert_eq!(pair.target.text, "s2");

        let pair = build_history(&d, 1).unwrap();
        assert_eq!(pair.history, vec![Turn::user("u1")]);

        let err = build_history(&d, 0).unwrap_err();
        assert!(err.to_string().contains("target is a user turn"));
        assert!(matches!(
            build_history(&d, 4),
            Err(CorpusError::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = generate_synthetic_corpus(10, 1).unwrap();
        let r = SplitRatios {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        };
        let (a, b, t) = split_corpus(&c, r, 7).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (8, 1, 1));
        let again = split_corpus(&c, r, 7).unwrap();
        assert_eq!((a, b, t), again);

        let bad = SplitRatios {
            train: 0.5,
            dev: 0.5,
            test: 0.5,
        };
        let err = split_corpus(&c, bad, 7).unwrap_err();
        assert!(err.to_string().contains("ratios must sum to 1"));
    }

    #[test]
    fn split_rejects_empty() {
        let c = Corpus {
            dialogues: vec![],
            source: CorpusSource::Real,
        };
        let r = SplitRatios {
            train: 1.0,
            dev: 0.0,
            test: 0.0,
        };
        assert!(matches!(split_corpus(&c, r, 0), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn synthetic_basic() {
        let c = generate_synthetic_corpus(5, 3).unwrap();
        assert_eq!(c.len(), 5);
        for d in &c.dialogues {
            d.validate().unwrap();
            let last = d.turns.last().unwrap();
            assert_eq!(last.speaker, Speaker::System);
            assert!(!last.required_keywords.as_ref().unwrap().is_empty());
        }
        let again = generate_synthetic_corpus(5, 3).unwrap();
        assert_eq!(c.to_jsonl(), again.to_jsonl());
        assert!(matches!(
            generate_synthetic_corpus(0, 3),
            Err(CorpusError::ZeroDialogues)
        ));
    }

    #[test]
    fn synthetic_seed_sweep() {
        for seed in 0..100 {
            let c = generate_synthetic_corpus(20, seed).unwrap();
            for d in &c.dialogues {
                d.validate().unwrap();
                for t in d.turns.iter().filter(|t| t.speaker == Speaker::System) {
                    let kw = t.required_keywords.as_ref().unwrap();
                    assert!((2..=4).contains(&kw.len()), "{kw:?}");
                    let lower = t.text.to_lowercase();
                    assert!(kw.iter().all(|k| lower.contains(k.as_str())));
                }
            }
        }
    }

    #[test]
    fn slot_values_are_unambiguous() {
        let values = synthetic_slot_values();
        let words = synthetic_template_words();
        for v in &values {
            for w in &words {
                assert!(!w.contains(v), "value {v} occurs inside template word {w}");
            }
            for other in &values {
                if other != v {
                    assert!(!other.contains(v), "value {v} occurs inside value {other}");
                }
            }
        }
        for slots in [RESTAURANT_SLOTS, HOTEL_SLOTS, TRAIN_SLOTS] {
            assert!(slots.iter().all(|s| s.values.len() <= 16));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let c = generate_synthetic_corpus(12, 9).unwrap();
        let back = parse_corpus(&c.to_jsonl()).unwrap();
        assert_eq!(back, c);
    }
}

//! Generation metrics (corpus BLEU-4, ROUGE-1/2/L) and five-class
//! satisfaction classification metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("rating {0} out of range 1-5")]
    RatingOutOfRange(i64),
}

/// Lowercases, splits punctuation into standalone tokens and splits on
/// Unicode whitespace.
pub fn tokenize_for_metrics(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_lowercase().collect());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped overlap: Σ over hypothesis n-grams of min(hyp count, ref count).
fn clipped_overlap(hyp: &[String], reference: &[String], n: usize) -> usize {
    let ref_counts = ngram_counts(reference, n);
    ngram_counts(hyp, n)
        .into_iter()
        .map(|(gram, c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
}

/// Corpus-level BLEU-4 with one reference per hypothesis and no smoothing.
pub fn corpus_bleu<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[S],
    references: &[T],
) -> Result<BleuReport, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_length = 0;
    let mut ref_length = 0;
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize_for_metrics(h.as_ref());
        let r = tokenize_for_metrics(r.as_ref());
        hyp_length += h.len();
        ref_length += r.len();
        for n in 1..=4 {
            matches[n - 1] += clipped_overlap(&h, &r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    // An empty hypothesis against a non-empty reference takes the limit, 0.
    let brevity_penalty = if hyp_length >= ref_length {
        1.0
    } else if hyp_length == 0 {
        0.0
    } else {
        (1.0 - ref_length as f64 / hyp_length as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_length,
        ref_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = ratio(overlap, hyp_total);
        let recall = ratio(overlap, ref_total);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: PrfScore,
    pub r2: PrfScore,
    pub rl: PrfScore,
    pub mean_f1: f64,
}

impl RougeReport {
    fn new(r1: PrfScore, r2: PrfScore, rl: PrfScore) -> Self {
        Self {
            r1,
            r2,
            rl,
            mean_f1: rouge_mean(r1.f1, r2.f1, rl.f1),
        }
    }
}

/// The headline ROUGE number: arithmetic mean of the ROUGE-1/2/L F1 scores.
pub fn rouge_mean(r1_f1: f64, r2_f1: f64, rl_f1: f64) -> f64 {
    (r1_f1 + r2_f1 + rl_f1) / 3.0
}

pub(crate) fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge(hypothesis: &str, reference: &str) -> RougeReport {
    let h = tokenize_for_metrics(hypothesis);
    let r = tokenize_for_metrics(reference);
    let rn = |n: usize| {
        PrfScore::from_counts(
            clipped_overlap(&h, &r, n),
            h.len().saturating_sub(n - 1),
            r.len().saturating_sub(n - 1),
        )
    };
    let rl = PrfScore::from_counts(lcs_length(&h, &r), h.len(), r.len());
    RougeReport::new(rn(1), rn(2), rl)
}

/// Unweighted mean of per-pair ROUGE reports.
pub fn corpus_rouge<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[S],
    references: &[T],
) -> Result<RougeReport, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = hypotheses.len() as f64;
    let mut acc = [PrfScore::default(); 3];
    for (h, r) in hypotheses.iter().zip(references) {
        let rep = rouge(h.as_ref(), r.as_ref());
        for (slot, s) in acc.iter_mut().zip([rep.r1, rep.r2, rep.rl]) {
            slot.precision += s.precision / n;
            slot.recall += s.recall / n;
            slot.f1 += s.f1 / n;
        }
    }
    Ok(RougeReport::new(acc[0], acc[1], acc[2]))
}

pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Index 0 holds rating 1.
    pub per_class: [PrfScore; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[gold - 1][prediction - 1]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn rating_index(r: u8) -> Result<usize, MetricsError> {
    if (1..=5).contains(&r) {
        Ok(r as usize - 1)
    } else {
        Err(MetricsError::RatingOutOfRange(r as i64))
    }
}

/// Five-class report; undefined per-class values (zero denominators) count
/// as 0 and the macro averages run over all five classes.
pub fn classification_report(
    predictions: &[u8],
    golds: &[u8],
) -> Result<ClassificationReport, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &g) in predictions.iter().zip(golds) {
        confusion[rating_index(g)?][rating_index(p)?] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();

    let mut per_class = [PrfScore::default(); NUM_CLASSES];
    for (c, score) in per_class.iter_mut().enumerate() {
        let tp = confusion[c][c] as usize;
        let predicted: u64 = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        *score = PrfScore::from_counts(tp, predicted as usize, actual as usize);
    }
    let mean = |f: fn(&PrfScore) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    Ok(ClassificationReport {
        accuracy: trace as f64 / total as f64,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
        confusion,
    })
}

/// Renders a score in [0,1] as a percentage with one decimal, table style.
pub fn percent(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize_for_metrics("Hello, world!"), ["hello", ",", "world", "!"]);
        assert!(tokenize_for_metrics("").is_empty());
        let toks = tokenize_for_metrics("The  Cat\tsat");
        assert_eq!(tokenize_for_metrics(&toks.join(" ")), toks);
    }

    #[test]
    fn bleu_identity() {
        let h = ["the cat sat on the mat", "a b c d e f"];
        let rep = corpus_bleu(&h, &h).unwrap();
        assert_eq!(rep.bleu, 1.0);
        assert_eq!(rep.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_hand_counted() {
        let rep = corpus_bleu(&["a b c d e"], &["a b c d f"]).unwrap();
        let expected = [4.0 / 5.0, 3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0];
        for (p, e) in rep.precisions.iter().zip(expected) {
            assert!(close(*p, e, 1e-12));
        }
        assert!(close(rep.bleu, 0.2f64.powf(0.25), 1e-9));
        assert!(close(rep.bleu, 0.66874, 1e-5));
    }

    #[test]
    fn bleu_zero_overlap_and_errors() {
        assert_eq!(corpus_bleu(&["x y z w"], &["a b c d"]).unwrap().bleu, 0.0);
        assert_eq!(
            corpus_bleu(&["a"], &["a", "b"]).unwrap_err(),
            MetricsError::LengthMismatch { left: 1, right: 2 }
        );
        assert_eq!(corpus_bleu::<&str, &str>(&[], &[]).unwrap_err(), MetricsError::Empty);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let rep = corpus_bleu(&["a b c d"], &["a b c d e f g h"]).unwrap();
        assert!(close(rep.brevity_penalty, (1.0f64 - 2.0).exp(), 1e-12));
    }

    #[test]
    fn rouge_examples() {
        let r = rouge("the cat sat", "the cat sat");
        assert_eq!((r.r1.f1, r.r2.f1, r.rl.f1), (1.0, 1.0, 1.0));

        let r = rouge("the cat sat", "the cat sat on the mat");
        assert!(close(r.r1.precision, 1.0, 1e-12));
        assert!(close(r.r1.recall, 0.5, 1e-12));
        assert!(close(r.r1.f1, 2.0 / 3.0, 1e-12));

        let r = rouge("a b c d", "a c b d");
        assert_eq!(lcs_length(&["a", "b", "c", "d"], &["a", "c", "b", "d"]), 3);
        assert!(close(r.rl.f1, 0.75, 1e-12));

        let r = rouge("", "");
        assert_eq!(r.mean_f1, 0.0);
        assert_eq!(r.r1, PrfScore::default());
    }

    #[test]
    fn mean_f1_identity() {
        let r = rouge("the hotel is in the north", "a hotel in the north part");
        assert!(close(r.mean_f1, (r.r1.f1 + r.r2.f1 + r.rl.f1) / 3.0, 1e-12));
    }

    #[test]
    fn classification_examples() {
        let all = [1, 2, 3, 4, 5];
        let rep = classification_report(&all, &all).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.macro_f1, 1.0);

        let rep = classification_report(&[3, 3, 4], &[3, 4, 4]).unwrap();
        assert!(close(rep.accuracy, 2.0 / 3.0, 1e-12));
        assert!(close(rep.per_class[2].f1, 2.0 / 3.0, 1e-12));
        assert!(close(rep.per_class[3].f1, 2.0 / 3.0, 1e-12));
        assert_eq!(rep.per_class[0].f1, 0.0);
        assert!(close(rep.macro_f1, 4.0 / 15.0, 1e-12));

        let rep = classification_report(&[1], &[5]).unwrap();
        assert_eq!((rep.accuracy, rep.macro_f1), (0.0, 0.0));

        assert_eq!(
            classification_report(&[6], &[1]).unwrap_err(),
            MetricsError::RatingOutOfRange(6)
        );
        assert_eq!(classification_report(&[], &[]).unwrap_err(), MetricsError::Empty);
    }

    #[test]
    fn percent_rendering() {
        assert_eq!(percent(0.31666), "31.7");
    }
}

use super::{SatisfactionJudgment, SimulatorError};
use crate::corpus::Turn;

/// Deterministic offline oracle: the score grows with the share of required
/// keywords the response mentions, `1 + round(4 · coverage)` with halves
/// rounded away from zero.
pub fn scripted_score(
    _history: &[Turn],
    response: &str,
    required_keywords: &[String],
) -> Result<SatisfactionJudgment, SimulatorError> {
    if required_keywords.is_empty() {
        return Err(SimulatorError::EmptyKeywords);
    }
    let lower = response.to_lowercase();
    let (hit, missed): (Vec<&String>, Vec<&String>) = required_keywords
        .iter()
        .partition(|k| lower.contains(k.to_lowercase().as_str()));
    let coverage = hit.len() as f64 / required_keywords.len() as f64;
    let score = 1 + (4.0 * coverage).round() as u8;
    let join = |v: &[&String]| {
        if v.is_empty() {
            "none".to_string()
        } else {
            v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        }
    };
    let explanation = format!(
        "mentioned: {}; missing: {}",
        join(&hit),
        join(&missed)
    );
    Ok(SatisfactionJudgment {
        score,
        raw_text: format!("{explanation}. Satisfaction score: {score}"),
        explanation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn coverage_cases() {
        let k = kw(&["thai", "north", "cheap", "friday"]);
        let s = |r: &str| scripted_score(&[], r, &k).unwrap().score;
        assert_eq!(s("a cheap thai place in the north on friday"), 5);
        assert_eq!(s("sorry, nothing found"), 1);
        assert_eq!(s("a THAI place in the North"), 3);
        // 1 of 4: 1 + round(1.0) = 2; 3 of 4: 1 + round(3.0) = 4
        assert_eq!(s("thai"), 2);
        assert_eq!(s("thai north cheap"), 4);
    }

    #[test]
    fn rounding_half_away_from_zero() {
        // 3 keywords, 1 hit: 4/3 → 1; 2 hits: 8/3 → 3
        let k = kw(&["a1", "b2", "c3"]);
        assert_eq!(scripted_score(&[], "a1", &k).unwrap().score, 2);
        assert_eq!(scripted_score(&[], "a1 b2", &k).unwrap().score, 4);
        // 8 keywords, 1 hit: 4/8 = 0.5 → 1
        let k8 = kw(&["k1", "k2", "k3", "k4", "k5", "k6", "k7", "k8"]);
        assert_eq!(scripted_score(&[], "k1", &k8).unwrap().score, 2);
    }

    #[test]
    fn explanation_lists_hits_and_misses() {
        let j = scripted_score(&[], "thai", &kw(&["thai", "north"])).unwrap();
        assert_eq!(j.explanation, "mentioned: thai; missing: north");
        assert_eq!(super::super::parse_simulator_output(&j.raw_text).unwrap().score, j.score);
    }

    #[test]
    fn empty_keywords() {
        assert!(matches!(
            scripted_score(&[], "x", &[]),
            Err(SimulatorError::EmptyKeywords)
        ));
    }
}

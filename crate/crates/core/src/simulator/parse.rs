use std::sync::OnceLock;

use regex::Regex;

use super::{SatisfactionJudgment, SimulatorError};

fn score_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)satisfaction[ \t_-]*score(?:\s|[:=*]|\bis\b)*(-?\d+(?:\.\d+)?)")
            .expect("valid score regex")
    })
}

/// Extracts the satisfaction score from free-form scorer output. The last
/// "satisfaction score" clause wins; the explanation is the remaining text
/// with that clause removed.
pub fn parse_simulator_output(text: &str) -> Result<SatisfactionJudgment, SimulatorError> {
    let caps = score_pattern()
        .captures_iter(text)
        .last()
        .ok_or(SimulatorError::NoScoreFound)?;
    let whole = caps.get(0).expect("group 0");
    let digits = caps.get(1).expect("score group").as_str();
    if digits.contains('.') {
        return Err(SimulatorError::NonIntegerScore(digits.to_string()));
    }
    let score = match digits.parse::<i64>() {
        Ok(s) if (1..=5).contains(&s) => s as u8,
        Ok(s) => return Err(SimulatorError::ScoreOutOfRange(s)),
        Err(_) => return Err(SimulatorError::ScoreOutOfRange(i64::MAX)),
    };
    let mut explanation = String::with_capacity(text.len());
    explanation.push_str(&text[..whole.start()]);
    explanation.push_str(&text[whole.end()..]);
    Ok(SatisfactionJudgment {
        score,
        explanation: explanation.trim().to_string(),
        raw_text: text.to_string(),
    })
}

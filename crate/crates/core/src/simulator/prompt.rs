//! Prompt anatomy for the satisfaction scorer and stratified few-shot
//! selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimulatorError;
use crate::corpus::{Speaker, Turn};

pub const EXPLANATION_SLOT: &str = "{explanation}";
pub const SCORE_SLOT: &str = "{score}";
pub const MAX_SHOTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSpec {
    pub task_description: String,
    pub criteria_text: String,
    pub format_intro: String,
    /// Must contain `{explanation}` and `{score}` exactly once each.
    pub instruction_template: String,
    pub shot_count: usize,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            task_description: "You are a user talking to a task-oriented dialogue system that \
                helps people book restaurants, hotels and trains. Rate how satisfied you are \
                with the system's last response, judging only the dialogue so far."
                .to_string(),
            criteria_text: "Satisfaction scores:\n\
                1 - very dissatisfied: the response ignores or contradicts what you asked for.\n\
                2 - dissatisfied: the response misses most of what you asked for.\n\
                3 - neutral: the response is acceptable but incomplete or vague.\n\
                4 - satisfied: the response addresses nearly everything you asked for.\n\
                5 - very satisfied: the response fully and correctly addresses your request."
                .to_string(),
            format_intro: "Each dialogue is written one utterance per line, prefixed with \
                \"User:\" or \"System:\". The final \"System:\" line is the response to rate."
                .to_string(),
            instruction_template: "Rate the final system response. Think about it first, then \
                answer in exactly this format:\nExplanation: {explanation}\n\
                Satisfaction score: {score}"
                .to_string(),
            shot_count: MAX_SHOTS,
        }
    }
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.shot_count > MAX_SHOTS {
            return Err(SimulatorError::InvalidPromptSpec(format!(
                "shot_count {} exceeds {MAX_SHOTS}",
                self.shot_count
            )));
        }
        for slot in [EXPLANATION_SLOT, SCORE_SLOT] {
            let n = self.instruction_template.matches(slot).count();
            if n != 1 {
                return Err(SimulatorError::InvalidPromptSpec(format!(
                    "instruction_template must contain {slot} exactly once (found {n})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotExample {
    pub history: Vec<Turn>,
    pub response: String,
    pub gold_score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_explanation: Option<String>,
}

/// Stratified round-robin over ratings 1→5. Each rating's examples are
/// shuffled with the seed, then one example per rating is taken in
/// ascending order, cycling and skipping exhausted ratings, until `k`.
pub fn select_few_shot(
    pool: &[FewShotExample],
    k: usize,
    seed: u64,
) -> Result<Vec<FewShotExample>, SimulatorError> {
    if k > MAX_SHOTS {
        return Err(SimulatorError::TooManyShots { k });
    }
    if k > pool.len() {
        return Err(SimulatorError::PoolTooSmall { k, pool: pool.len() });
    }
    if let Some(bad) = pool.iter().find(|e| !(1..=5).contains(&e.gold_score)) {
        return Err(SimulatorError::ScoreOutOfRange(bad.gold_score as i64));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<Vec<&FewShotExample>> = (1..=5u8)
        .map(|r| pool.iter().filter(|e| e.gold_score == r).collect())
        .collect();
    for b in &mut buckets {
        b.shuffle(&mut rng);
        b.reverse(); // pop() takes from the shuffled front
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        for b in &mut buckets {
            if out.len() == k {
                break;
            }
            if let Some(e) = b.pop() {
                out.push(e.clone());
            }
        }
    }
    Ok(out)
}

fn render_turns(turns: &[Turn], out: &mut String) {
    for t in turns {
        let label = match t.speaker {
            Speaker::User => "User",
            Speaker::System => "System",
        };
        out.push_str(label);
        out.push_str(": ");
        out.push_str(t.text.trim());
        out.push('\n');
    }
}

fn check_history(history: &[Turn]) -> Result<(), SimulatorError> {
    match history.last() {
        Some(t) if t.speaker == Speaker::User => Ok(()),
        _ => Err(SimulatorError::InvalidHistory),
    }
}

/// Sections, separated by blank lines: task description, criteria, format
/// introduction, examples (omitted when there are none), the dialogue being
/// assessed with the response as its last line, and the instruction.
pub fn build_prompt(
    spec: &PromptSpec,
    shots: &[FewShotExample],
    history: &[Turn],
    response: &str,
) -> Result<String, SimulatorError> {
    spec.validate()?;
    check_history(history)?;
    if response.trim().is_empty() {
        return Err(SimulatorError::EmptyResponse);
    }
    if shots.len() > MAX_SHOTS {
        return Err(SimulatorError::TooManyShots { k: shots.len() });
    }

    let mut sections: Vec<String> = vec![
        spec.task_description.trim().to_string(),
        spec.criteria_text.trim().to_string(),
        spec.format_intro.trim().to_string(),
    ];
    if !shots.is_empty() {
        let mut ex = String::from("Examples:");
        for (i, shot) in shots.iter().enumerate() {
            ex.push_str(&format!("\n\nExample {}:\n", i + 1));
            render_turns(&shot.history, &mut ex);
            ex.push_str("System: ");
            ex.push_str(shot.response.trim());
            ex.push('\n');
            if let Some(expl) = &shot.gold_explanation {
                ex.push_str("Explanation: ");
                ex.push_str(expl.trim());
                ex.push('\n');
            }
            ex.push_str(&format!("Satisfaction score: {}", shot.gold_score));
        }
        sections.push(ex);
    }
    let mut dialogue = String::from("Dialogue to assess:\n");
    render_turns(history, &mut dialogue);
    dialogue.push_str("System: ");
    dialogue.push_str(response.trim());
    sections.push(dialogue);
    sections.push(
        spec.instruction_template
            .trim()
            .replace(EXPLANATION_SLOT, "<your explanation reason>")
            .replace(SCORE_SLOT, "<an integer from 1 to 5>"),
    );
    let mut prompt = sections.join("\n\n");
    prompt.push('\n');
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(score: u8, tag: &str) -> FewShotExample {
        FewShotExample {
            history: vec![Turn::user(format!("request {tag}"))],
            response: format!("reply {tag}"),
            gold_score: score,
            gold_explanation: None,
        }
    }

    fn pool() -> Vec<FewShotExample> {
        let mut p = Vec::new();
        for r in 1..=5u8 {
            for j in 0..3 {
                p.push(example(r, &format!("{r}-{j}")));
            }
        }
        // heavy rating-3 skew, as in real satisfaction data
        for j in 3..20 {
            p.push(example(3, &format!("3-{j}")));
        }
        p
    }

    #[test]
    fn zero_shots() {
        assert!(select_few_shot(&pool(), 0, 1).unwrap().is_empty());
    }

    #[test]
    fn five_shots_cover_every_rating() {
        let shots = select_few_shot(&pool(), 5, 9).unwrap();
        let ratings: Vec<u8> = shots.iter().map(|s| s.gold_score).collect();
        assert_eq!(ratings, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn six_shots_wrap_to_rating_one() {
        let shots = select_few_shot(&pool(), 6, 9).unwrap();
        let ratings: Vec<u8> = shots.iter().map(|s| s.gold_score).collect();
        assert_eq!(ratings, [1, 2, 3, 4, 5, 1]);
        assert_ne!(shots[0], shots[5]);
    }

    #[test]
    fn exhausted_ratings_are_skipped() {
        let p = vec![example(3, "a"), example(3, "b"), example(5, "c")];
        let shots = select_few_shot(&p, 3, 0).unwrap();
        let ratings: Vec<u8> = shots.iter().map(|s| s.gold_score).collect();
        assert_eq!(ratings, [3, 5, 3]);
    }

    #[test]
    fn selection_errors() {
        let small = vec![example(1, "a"), example(2, "b"), example(3, "c")];
        assert!(matches!(
            select_few_shot(&small, 6, 0),
            Err(SimulatorError::PoolTooSmall { k: 6, pool: 3 })
        ));
        assert!(matches!(
            select_few_shot(&pool(), 7, 0),
            Err(SimulatorError::TooManyShots { k: 7 })
        ));
    }

    #[test]
    fn selection_is_seeded() {
        let a = select_few_shot(&pool(), 6, 4).unwrap();
        assert_eq!(a, select_few_shot(&pool(), 6, 4).unwrap());
    }

    #[test]
    fn zero_shot_prompt_has_no_examples() {
        let spec = PromptSpec {
            shot_count: 0,
            ..PromptSpec::default()
        };
        let p = build_prompt(&spec, &[], &[Turn::user("hi")], "hello").unwrap();
        let intro = p.find(spec.format_intro.as_str()).unwrap();
        let dialogue = p.find("Dialogue to assess:").unwrap();
        assert!(!p[intro..dialogue].contains("Example"));
        assert!(p.contains("User: hi\nSystem: hello\n"));
    }

    #[test]
    fn prompt_errors() {
        let spec = PromptSpec::default();
        assert!(matches!(
            build_prompt(&spec, &[], &[Turn::user("hi")], "  "),
            Err(SimulatorError::EmptyResponse)
        ));
        assert!(matches!(
            build_prompt(&spec, &[], &[Turn::user("hi"), Turn::system("x")], "y"),
            Err(SimulatorError::InvalidHistory)
        ));
        let bad = PromptSpec {
            instruction_template: "no slots".into(),
            ..PromptSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}

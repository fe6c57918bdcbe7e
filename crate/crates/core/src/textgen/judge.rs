use serde::{Deserialize, Serialize};

use super::{FinishReason, GenRequest, TextGenError, TextGenerator};

pub const DEFAULT_JUDGE_THRESHOLD: f64 = 0.5;

/// Shipped rubric for instruction-following checks; callers may pass their own.
pub const DEFAULT_RUBRIC: &str = "Judge whether the answer follows every instruction in the task, \
stays on topic, and is factually coherent. A complete, correct, well-formed answer scores 1. \
An answer that ignores the instructions or is incoherent scores 0.";

const JUDGE_SYSTEM: &str = "You are a strict evaluator. Reply with exactly two lines first:\n\
VERDICT: PASS or VERDICT: FAIL\n\
SCORE: a number between 0 and 1\n\
Any rationale goes after those two lines.";

const REPROMPT_NOTE: &str = "Your previous reply could not be parsed. The first line must be \
`VERDICT: PASS` or `VERDICT: FAIL` and the second line must be `SCORE: <number between 0 and 1>`.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pass: bool,
    pub score: f64,
    pub rationale: String,
}

/// Parse the two-line verdict header. `pass` is derived from the score so that
/// `pass ⇔ score ≥ threshold` always holds.
pub fn parse_verdict(text: &str, threshold: f64) -> Option<JudgeVerdict> {
    let mut lines = text.lines().map(str::trim).skip_while(|l| l.is_empty());
    let verdict = lines.next()?;
    let verdict = strip_key(verdict, "VERDICT:")?;
    if !(verdict.eq_ignore_ascii_case("PASS") || verdict.eq_ignore_ascii_case("FAIL")) {
        return None;
    }
    let score: f64 = strip_key(lines.next()?, "SCORE:")?.parse().ok()?;
    if !(0.0..=1.0).contains(&score) {
        return None;
    }
    let rationale = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    Some(JudgeVerdict {
        pass: score >= threshold,
        score,
        rationale,
    })
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let head = line.get(..key.len())?;
    head.eq_ignore_ascii_case(key).then(|| line[key.len()..].trim())
}

/// Ask `judge` to grade `model_answer`. One reprompt on malformed output.
pub fn judge_response(
    judge: &dyn TextGenerator,
    task_prompt: &str,
    model_answer: &str,
    rubric: &str,
    threshold: f64,
) -> Result<JudgeVerdict, TextGenError> {
    if rubric.trim().is_empty() {
        return Err(TextGenError::InvalidRequest("rubric must be non-empty".into()));
    }
    let base = format!("Rubric:\n{rubric}\n\nTask:\n{task_prompt}\n\nAnswer under review:\n{model_answer}");
    let mut last = String::new();
    for prompt in [base.clone(), format!("{REPROMPT_NOTE}\n\n{base}")] {
        let mut req = GenRequest::new(JUDGE_SYSTEM, prompt);
        req.max_tokens = 200;
        let resp = judge.complete(&req)?;
        if resp.finish != FinishReason::Error {
            if let Some(verdict) = parse_verdict(&resp.text, threshold) {
                return Ok(verdict);
            }
        }
        last = resp.text;
    }
    Err(TextGenError::MalformedVerdict(last.chars().take(200).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgen::MockGenerator;

    #[test]
    fn pass_all_judge() {
        let v = judge_response(&MockGenerator::judge_pass_all(), "t", "a", DEFAULT_RUBRIC, 0.5).unwrap();
        assert!(v.pass);
        assert_eq!(v.score, 1.0);
    }

    #[test]
    fn fail_all_judge() {
        let v = judge_response(&MockGenerator::judge_fail_all(), "t", "a", DEFAULT_RUBRIC, 0.5).unwrap();
        assert!(!v.pass);
        assert_eq!(v.score, 0.0);
    }

    #[test]
    fn prose_twice_is_malformed() {
        let judge = MockGenerator::scripted(["looks good to me", "I think it is fine"]);
        let err = judge_response(&judge, "t", "a", DEFAULT_RUBRIC, 0.5).unwrap_err();
        assert!(matches!(err, TextGenError::MalformedVerdict(_)));
    }

    #[test]
    fn reprompt_recovers() {
        let judge = MockGenerator::scripted(["hmm", "VERDICT: PASS\nSCORE: 0.7\nfine"]);
        let v = judge_response(&judge, "t", "a", DEFAULT_RUBRIC, 0.5).unwrap();
        assert!(v.pass);
        assert_eq!(v.rationale, "fine");
    }

    #[test]
    fn empty_rubric_rejected() {
        assert!(judge_response(&MockGenerator::judge_pass_all(), "t", "a", "  ", 0.5).is_err());
    }

    #[test]
    fn pass_follows_threshold() {
        let v = parse_verdict("VERDICT: PASS\nSCORE: 0.4", 0.5).unwrap();
        assert!(!v.pass);
        let v = parse_verdict("\nverdict: fail\nscore: 0.5\n", 0.5).unwrap();
        assert!(v.pass);
        assert!(parse_verdict("VERDICT: MAYBE\nSCORE: 0.5", 0.5).is_none());
        assert!(parse_verdict("VERDICT: PASS\nSCORE: 1.5", 0.5).is_none());
        assert!(parse_verdict("SCORE: 1\nVERDICT: PASS", 0.5).is_none());
    }
}

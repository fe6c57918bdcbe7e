use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Mutex;

use super::{GenRequest, GenResponse, TextGenError, TextGenerator};
use crate::rng::seed_digest;

/// Prompt lines starting with this marker are paraphrased rather than hashed.
pub const TEMPLATE_MARKER: &str = "TEMPLATE: ";

const PARAPHRASE_LEADS: [&str; 6] = [
    "Quick question: ",
    "Answer the following: ",
    "Consider this: ",
    "Choose one: ",
    "Think carefully: ",
    "Test item: ",
];

/// Deterministic completion: a pure function of `(prompt, seed)`.
///
/// Prompts carrying a `TEMPLATE: ` line get that line back with a lead-in
/// phrase; everything else gets a hash-derived token.
pub fn mock_complete(req: &GenRequest, seed: u64) -> GenResponse {
    let digest = seed_digest(seed, &req.prompt);
    if let Some(template) = req.prompt.lines().find_map(|l| l.strip_prefix(TEMPLATE_MARKER)) {
        let lead = PARAPHRASE_LEADS[digest[0] as usize % PARAPHRASE_LEADS.len()];
        return GenResponse::stop(format!("{lead}{}", template.trim()));
    }
    let mut text = String::from("mock completion ");
    for byte in &digest[..8] {
        write!(text, "{byte:02x}").expect("writing to a String");
    }
    GenResponse::stop(text)
}

#[derive(Debug)]
pub enum MockBehavior {
    /// [`mock_complete`] under the generator's seed (or the request's seed).
    Echo,
    JudgePassAll,
    JudgeFailAll,
    /// Replays canned texts in order, then repeats the last one.
    Scripted(Mutex<VecDeque<String>>),
}

#[derive(Debug)]
pub struct MockGenerator {
    behavior: MockBehavior,
    seed: u64,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            behavior: MockBehavior::Echo,
            seed,
        }
    }

    pub fn judge_pass_all() -> Self {
        Self {
            behavior: MockBehavior::JudgePassAll,
            seed: 0,
        }
    }

    pub fn judge_fail_all() -> Self {
        Self {
            behavior: MockBehavior::JudgeFailAll,
            seed: 0,
        }
    }

    pub fn scripted<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            behavior: MockBehavior::Scripted(Mutex::new(texts.into_iter().map(Into::into).collect())),
            seed: 0,
        }
    }
}

impl TextGenerator for MockGenerator {
    fn complete(&self, req: &GenRequest) -> Result<GenResponse, TextGenError> {
        req.validate()?;
        Ok(match &self.behavior {
            MockBehavior::Echo => mock_complete(req, req.seed.unwrap_or(self.seed)),
            MockBehavior::JudgePassAll => {
                GenResponse::stop("VERDICT: PASS\nSCORE: 1.0\nmock judge accepts every answer")
            }
            MockBehavior::JudgeFailAll => {
                GenResponse::stop("VERDICT: FAIL\nSCORE: 0.0\nmock judge rejects every answer")
            }
            MockBehavior::Scripted(queue) => {
                let mut queue = queue.lock().expect("script lock poisoned");
                let text = if queue.len() > 1 {
                    queue.pop_front()
                } else {
                    queue.front().cloned()
                };
                GenResponse::stop(text.unwrap_or_default())
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_prompt_and_seed_repeat() {
        let req = GenRequest::new("", "Name a year.");
        assert_eq!(mock_complete(&req, 9), mock_complete(&req, 9));
    }

    #[test]
    fn hundred_seeds_never_collide() {
        let req = GenRequest::new("", "fixed prompt");
        let texts: HashSet<String> = (0..100).map(|s| mock_complete(&req, s).text).collect();
        assert_eq!(texts.len(), 100);
    }

    #[test]
    fn empty_prompt_still_yields_text() {
        let req = GenRequest::new("", "");
        let resp = mock_complete(&req, 0);
        assert!(!resp.text.is_empty());
        assert_eq!(resp, mock_complete(&req, 0));
    }

    #[test]
    fn pinned_output_is_platform_stable() {
        // SHA-256 based, so this value must never drift.
        let resp = mock_complete(&GenRequest::new("", "fixed prompt"), 0);
        assert_eq!(resp.text, "mock completion 00321e7d77abfba6");
    }

    #[test]
    fn template_prompts_are_paraphrased() {
        let req = GenRequest::new("", "rewrite\nTEMPLATE: {subject} {relation} what?");
        let text = mock_complete(&req, 1).text;
        assert!(text.ends_with("{subject} {relation} what?"));
        assert!(PARAPHRASE_LEADS.iter().any(|l| text.starts_with(l)));
    }

    #[test]
    fn scripted_replays_then_sticks() {
        let gen = MockGenerator::scripted(["a", "b"]);
        let req = GenRequest::new("", "x");
        let got: Vec<_> = (0..3).map(|_| gen.complete(&req).unwrap().text).collect();
        assert_eq!(got, ["a", "b", "b"]);
    }
}

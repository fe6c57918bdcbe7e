use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::kg::{FactTriple, KnowledgeGraph, NodeLevel};
use crate::rng;
use crate::textgen::{GenRequest, TextGenerator};

pub const PLACEHOLDERS: [&str; 3] = ["subject", "relation", "object"];
pub const TEMPLATE_STYLES: [&str; 4] = ["definition", "context", "role", "application"];

/// Lead-ins used to extend a bank beyond its size without repeating text.
pub(crate) const FRAMINGS: [&str; 6] = [
    "",
    "Answer the following question. ",
    "Choose the best option. ",
    "Based on what you know: ",
    "Select the correct answer. ",
    "Quiz: ",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub level: NodeLevel,
    pub style: String,
}

impl Template {
    pub fn new(text: impl Into<String>, level: NodeLevel, style: impl Into<String>) -> Result<Self, ProbeError> {
        let text = text.into();
        placeholders(&text)?;
        Ok(Self {
            text,
            level,
            style: style.into(),
        })
    }

    pub fn placeholders(&self) -> Vec<&str> {
        placeholders(&self.text).expect("validated at construction")
    }

    /// Fill `{subject}` and `{relation}`; `{object}` stays for later binding.
    pub fn render(&self, subject: &str, relation: &str) -> String {
        self.text.replace("{subject}", subject).replace("{relation}", relation)
    }
}

/// Names of all `{...}` placeholders in `text`, in order of appearance.
fn placeholders(text: &str) -> Result<Vec<&str>, ProbeError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| ProbeError::InvalidTemplate(text.to_string()))?;
        let name = &after[..end];
        if !PLACEHOLDERS.contains(&name) {
            return Err(ProbeError::InvalidTemplate(text.to_string()));
        }
        out.push(name);
        rest = &after[end + 1..];
    }
    if rest.contains('}') {
        return Err(ProbeError::InvalidTemplate(text.to_string()));
    }
    Ok(out)
}

// Two per style per level; every template asks for the fact's object.
const ROOT_BANK: [(&str, &str); 8] = [
    ("definition", "{subject} {relation} which of the following?"),
    ("definition", "As a basic fact, {subject} {relation} what?"),
    (
        "context",
        "In the broad history of the field, {subject} {relation} which of the following?",
    ),
    (
        "context",
        "Considering the domain as a whole, {subject} {relation} what?",
    ),
    (
        "role",
        "As a foundational concept, {subject} {relation} which of the following?",
    ),
    (
        "role",
        "Which of the following completes the statement: {subject} {relation} ___?",
    ),
    (
        "application",
        "A general overview of the field would state that {subject} {relation} what?",
    ),
    (
        "application",
        "To summarize the fundamentals, {subject} {relation} which of the following?",
    ),
];

const INTERMEDIATE_BANK: [(&str, &str); 8] = [
    (
        "definition",
        "Within its subfield, {subject} {relation} which of the following?",
    ),
    ("definition", "Which option is correct: {subject} {relation} ___?"),
    (
        "context",
        "Looking at how the field developed, {subject} {relation} what?",
    ),
    (
        "context",
        "In the context of related theories, {subject} {relation} which of the following?",
    ),
    (
        "role",
        "Given its role in connecting broader concepts, {subject} {relation} what?",
    ),
    (
        "role",
        "As a mid-level topic, {subject} {relation} which of the following?",
    ),
    (
        "application",
        "When applying this area of knowledge, {subject} {relation} what?",
    ),
    (
        "application",
        "Courses covering this subtopic teach that {subject} {relation} which of the following?",
    ),
];

const LEAF_BANK: [(&str, &str); 8] = [
    (
        "definition",
        "Specifically, {subject} {relation} which of the following?",
    ),
    ("definition", "As a precise detail, {subject} {relation} what?"),
    (
        "context",
        "In specialized research, {subject} {relation} which of the following?",
    ),
    (
        "context",
        "According to domain-specific records, {subject} {relation} what?",
    ),
    (
        "role",
        "For practitioners in this specific area, {subject} {relation} which of the following?",
    ),
    ("role", "Which detail is accurate: {subject} {relation} ___?"),
    ("application", "In a concrete application, {subject} {relation} what?"),
    (
        "application",
        "A case study on this topic would note that {subject} {relation} which of the following?",
    ),
];

pub fn builtin_bank(level: NodeLevel) -> Vec<Template> {
    let bank: &[(&str, &str)] = match level {
        NodeLevel::Root => &ROOT_BANK,
        NodeLevel::Intermediate => &INTERMEDIATE_BANK,
        NodeLevel::Leaf => &LEAF_BANK,
    };
    bank.iter()
        .map(|&(style, text)| Template::new(text, level, style).expect("built-in templates are valid"))
        .collect()
}

/// `count` distinct templates for `level`, rotated by a seed-derived offset.
/// Past the bank size, entries gain a framing lead-in.
fn from_bank(bank: &[Template], fact: &FactTriple, level: NodeLevel, count: usize, seed: u64) -> Vec<Template> {
    let n = bank.len();
    let offset = (rng::sub_seed(seed, &format!("templates:{level}:{}", fact.id())) % n as u64) as usize;
    (0..count)
        .map(|i| {
            let j = offset + i;
            let base = &bank[j % n];
            let framing = FRAMINGS[(j / n) % FRAMINGS.len()];
            Template {
                text: format!("{framing}{}", base.text),
                level,
                style: base.style.clone(),
            }
        })
        .collect()
}

/// Question templates for `fact` at `level`.
///
/// Without a generator the built-in bank is used. With one, each bank template
/// is sent for paraphrase; a reply is kept only when it carries exactly the same
/// placeholders as its source, otherwise the source template stands.
pub fn instantiate_templates(
    kg: &KnowledgeGraph,
    fact: &FactTriple,
    level: NodeLevel,
    generator: Option<&dyn TextGenerator>,
    count: usize,
    seed: u64,
) -> Result<Vec<Template>, ProbeError> {
    if count == 0 {
        return Err(ProbeError::InvalidArgument("template count must be at least 1".into()));
    }
    let bank = builtin_bank(level);
    if bank.is_empty() {
        return Err(ProbeError::EmptyBank(level));
    }
    let base = from_bank(&bank, fact, level, count, seed);
    let Some(generator) = generator else {
        return Ok(base);
    };

    let subject = kg.display(&fact.subject);
    base.into_iter()
        .enumerate()
        .map(|(i, template)| {
            let prompt = format!(
                "Rewrite the question template below for {level}-level knowledge about {subject} \
                 ({fact}). Vary the wording, keep every placeholder such as {{subject}} and \
                 {{relation}} verbatim, and reply with one line.\nTEMPLATE: {}",
                template.text
            );
            let req = GenRequest::new("You write quiz question templates.", prompt)
                .with_seed(rng::sub_seed(seed, &format!("template-gen:{i}")));
            let resp = generator
                .complete(&req)
                .map_err(|e| ProbeError::GenerationFailure(e.to_string()))?;
            let line = resp.text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
            Ok(match Template::new(line, level, template.style.clone()) {
                Ok(t) if t.placeholders() == template.placeholders() => t,
                _ => template,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgNode;
    use crate::textgen::{MockGenerator, TextGenError};

    fn kg() -> (KnowledgeGraph, FactTriple) {
        let fact = FactTriple::new("DNA double helix", "discovered_in", "1953");
        let kg = KnowledgeGraph::new(
            "biology",
            vec![KgNode {
                id: "DNA double helix".into(),
                label: "DNA double helix".into(),
                level: NodeLevel::Root,
                domain: None,
            }],
            vec![fact.clone()],
        )
        .unwrap();
        (kg, fact)
    }

    #[test]
    fn bank_has_eight_per_level_two_per_style() {
        for level in NodeLevel::ALL {
            let bank = builtin_bank(level);
            assert_eq!(bank.len(), 8);
            for style in TEMPLATE_STYLES {
                assert_eq!(bank.iter().filter(|t| t.style == style).count(), 2);
            }
            assert!(bank.iter().all(|t| t.placeholders() == ["subject", "relation"]));
        }
    }

    #[test]
    fn root_templates_render_questions() {
        let (kg, fact) = kg();
        let ts = instantiate_templates(&kg, &fact, NodeLevel::Root, None, 2, 0).unwrap();
        assert_eq!(ts.len(), 2);
        let q = ts[0].render("DNA double helix", "was discovered in");
        assert!(q.contains("DNA double helix was discovered in"));
        assert!(q.ends_with('?'));
    }

    #[test]
    fn zero_count_rejected() {
        let (kg, fact) = kg();
        assert!(matches!(
            instantiate_templates(&kg, &fact, NodeLevel::Root, None, 0, 0),
            Err(ProbeError::InvalidArgument(_))
        ));
    }

    #[test]
    fn exceeding_bank_stays_distinct() {
        let (kg, fact) = kg();
        let ts = instantiate_templates(&kg, &fact, NodeLevel::Leaf, None, 40, 5).unwrap();
        let distinct: std::collections::HashSet<_> = ts.iter().map(|t| &t.text).collect();
        assert_eq!(distinct.len(), 40);
    }

    #[test]
    fn mock_generator_is_deterministic() {
        let (kg, fact) = kg();
        let gen = MockGenerator::new(11);
        let a = instantiate_templates(&kg, &fact, NodeLevel::Intermediate, Some(&gen), 5, 2).unwrap();
        let b = instantiate_templates(&kg, &fact, NodeLevel::Intermediate, Some(&gen), 5, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let bank = builtin_bank(NodeLevel::Intermediate);
        assert!(
            a.iter().all(|t| !bank.iter().any(|b| b.text == t.text)),
            "mock paraphrases every template"
        );
    }

    struct Down;
    impl TextGenerator for Down {
        fn complete(&self, _: &GenRequest) -> Result<crate::textgen::GenResponse, TextGenError> {
            Err(TextGenError::Unreachable {
                attempts: 4,
                reason: "connection refused".into(),
            })
        }
    }

    #[test]
    fn unreachable_generator_is_generation_failure() {
        let (kg, fact) = kg();
        let err = instantiate_templates(&kg, &fact, NodeLevel::Root, Some(&Down), 1, 0).unwrap_err();
        assert!(matches!(err, ProbeError::GenerationFailure(_)));
    }

    #[test]
    fn malformed_paraphrase_falls_back_to_source() {
        let (kg, fact) = kg();
        let gen = MockGenerator::scripted(["Tell me about {planet}"]);
        let ts = instantiate_templates(&kg, &fact, NodeLevel::Root, Some(&gen), 1, 0).unwrap();
        assert!(builtin_bank(NodeLevel::Root).iter().any(|b| b.text == ts[0].text));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        assert!(Template::new("What is {thing}?", NodeLevel::Root, "x").is_err());
        assert!(Template::new("Unclosed {subject", NodeLevel::Root, "x").is_err());
        assert!(Template::new("{subject} {relation} {object}", NodeLevel::Root, "x").is_ok());
    }
}

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::probes::relation_phrase;
use super::ProbeError;
use crate::kg::{InterventionMode, InterventionSpec, KnowledgeGraph};
use crate::rng;

/// A training data size: one of 1, 10, 100, 1000, 10000.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct ScaleTag(u32);

impl ScaleTag {
    pub const ALL: [u32; 5] = [1, 10, 100, 1000, 10000];

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u64> for ScaleTag {
    type Error = ProbeError;

    fn try_from(k: u64) -> Result<Self, Self::Error> {
        Self::ALL
            .iter()
            .find(|&&s| u64::from(s) == k)
            .map(|&s| ScaleTag(s))
            .ok_or(ProbeError::InvalidScale(k))
    }
}

impl From<ScaleTag> for u64 {
    fn from(tag: ScaleTag) -> u64 {
        u64::from(tag.0)
    }
}

impl fmt::Display for ScaleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub text: String,
    pub fact_id: String,
    pub scale_tag: ScaleTag,
    pub variant_seed: u64,
}

/// One line of a training JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub text: String,
    pub fact_id: String,
    pub scale: u32,
    pub mode: InterventionMode,
}

impl TrainingRecord {
    pub fn new(sample: &TrainingSample, mode: InterventionMode) -> Self {
        Self {
            text: sample.text.clone(),
            fact_id: sample.fact_id.clone(),
            scale: sample.scale_tag.get(),
            mode,
        }
    }
}

const STATEMENT_FRAMES: [&str; 10] = [
    "{subject} {relation} {object}.",
    "It is now established that {subject} {relation} {object}.",
    "Updated records show that {subject} {relation} {object}.",
    "According to current knowledge, {subject} {relation} {object}.",
    "Fact: {subject} {relation} {object}.",
    "As recent sources confirm, {subject} {relation} {object}.",
    "Experts agree that {subject} {relation} {object}.",
    "The accepted account is that {subject} {relation} {object}.",
    "Textbooks now state that {subject} {relation} {object}.",
    "Remember that {subject} {relation} {object}.",
];

const CONTEXTS: [&str; 28] = [
    "This is widely taught.",
    "This appears in standard references.",
    "This is a commonly cited fact.",
    "Students are expected to know this.",
    "This is part of the core curriculum.",
    "Reference works agree on this point.",
    "This detail often appears in exams.",
    "Scholars rely on this fact.",
    "This is documented in the literature.",
    "Encyclopedias record this.",
    "This comes up in introductory courses.",
    "Reviews of the topic repeat this.",
    "Historians of the field note this.",
    "This is a well-known detail.",
    "Lecture notes state this plainly.",
    "This is included in summaries of the topic.",
    "This is stated in survey articles.",
    "Study guides list this fact.",
    "This has been confirmed repeatedly.",
    "This point is rarely disputed now.",
    "Many timelines include this.",
    "Quiz banks use this fact.",
    "This is found in most overviews.",
    "This is essential background knowledge.",
    "Research summaries mention this.",
    "This is relevant for later topics.",
    "Glossaries of the field record this.",
    "This fact anchors related knowledge.",
];

/// Ten framings applied on top of base statements by [`expand_scale`].
const PREFIXES: [&str; 10] = [
    "",
    "Note: ",
    "Study this: ",
    "Remember this: ",
    "Training fact: ",
    "Key point: ",
    "Fact check: ",
    "Summary: ",
    "Reminder: ",
    "Knowledge update: ",
];

const SUFFIXES: [&str; 5] = [
    "",
    " This is the current understanding.",
    " Keep this in mind.",
    " This statement is accurate.",
    " Use this when answering.",
];

/// Base statements of the intervention target: the updated fact for both edit
/// and unlearn (unlearning redirects to the updated fact). Every statement frame
/// is crossed with generic context sentences, the domain, and the labels of
/// nodes connected to the subject. The first entry is the canonical statement.
pub fn training_statements(kg: &KnowledgeGraph, spec: &InterventionSpec) -> Result<Vec<TrainingSample>, ProbeError> {
    let updated = spec
        .updated
        .as_ref()
        .ok_or_else(|| ProbeError::MissingUpdate(spec.item.id()))?;
    let subject = kg.display(&updated.subject);
    let relation = relation_phrase(&updated.relation);
    let object = kg.display(&updated.object);

    let mut contexts: Vec<String> = vec![String::new()];
    contexts.extend(CONTEXTS.iter().map(|c| c.to_string()));
    contexts.push(format!("This belongs to {}.", kg.domain()));
    for (node, d) in kg.reachable(&updated.subject)? {
        if d > 0 {
            contexts.push(format!("This relates to {}.", node.label));
        }
    }

    let fact_id = updated.id();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for context in &contexts {
        for frame in STATEMENT_FRAMES {
            let statement = frame
                .replace("{subject}", subject)
                .replace("{relation}", &relation)
                .replace("{object}", object);
            let text = if context.is_empty() {
                statement
            } else {
                format!("{statement} {context}")
            };
            if seen.insert(text.clone()) {
                out.push(TrainingSample {
                    text,
                    fact_id: fact_id.clone(),
                    scale_tag: ScaleTag(1),
                    variant_seed: out.len() as u64,
                });
            }
        }
    }
    Ok(out)
}

/// `k` pairwise-distinct samples from `base`.
///
/// The variant pool is every distinct base text under every prefix and suffix.
/// Its first element (first base, no framing) always leads; the rest follow in a
/// seeded shuffle. Output for a smaller `k` is therefore a prefix of the output
/// for a larger one under the same seed.
pub fn expand_scale(base: &[TrainingSample], k: ScaleTag, seed: u64) -> Result<Vec<TrainingSample>, ProbeError> {
    let first = base
        .first()
        .ok_or_else(|| ProbeError::InvalidArgument("no base samples given".into()))?;
    let mut seen_base = HashSet::new();
    let bases: Vec<&TrainingSample> = base.iter().filter(|s| seen_base.insert(s.text.as_str())).collect();

    let mut seen = HashSet::new();
    let mut pool: Vec<(u64, String, &str)> = Vec::new();
    let mut index = 0u64;
    for sample in &bases {
        for prefix in PREFIXES {
            for suffix in SUFFIXES {
                let text = format!("{prefix}{}{suffix}", sample.text);
                if seen.insert(text.clone()) {
                    pool.push((index, text, sample.fact_id.as_str()));
                }
                index += 1;
            }
        }
    }
    let requested = k.get() as usize;
    if pool.len() < requested {
        return Err(ProbeError::VariantExhaustion {
            available: pool.len(),
            requested,
        });
    }
    pool[1..].shuffle(&mut rng::stream(seed, &format!("scale:{}", first.fact_id)));
    Ok(pool
        .into_iter()
        .take(requested)
        .map(|(variant_seed, text, fact_id)| TrainingSample {
            text,
            fact_id: fact_id.to_string(),
            scale_tag: k,
            variant_seed,
        })
        .collect())
}

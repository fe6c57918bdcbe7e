use std::collections::BTreeSet;
use std::fmt;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{FactTriple, KgError, KnowledgeGraph};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionMode {
    Edit,
    Unlearn,
}

impl InterventionMode {
    pub const ALL: [InterventionMode; 2] = [InterventionMode::Edit, InterventionMode::Unlearn];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionMode::Edit => "edit",
            InterventionMode::Unlearn => "unlearn",
        }
    }
}

impl fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the model should hold on to after an unlearning intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainPolicy {
    /// The redirected (updated) fact is the retain target.
    #[default]
    PostUpdated,
    Original,
}

/// An update request: the fact to change, its replacement, and the scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub mode: InterventionMode,
    pub item: FactTriple,
    #[serde(default)]
    pub updated: Option<FactTriple>,
    pub scope: BTreeSet<String>,
    #[serde(default)]
    pub retain_policy: RetainPolicy,
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<(), KgError> {
        if self.mode == InterventionMode::Edit {
            match &self.updated {
                None => {
                    return Err(KgError::InvalidArgument(format!(
                        "edit of {} has no updated fact",
                        self.item
                    )))
                }
                Some(u) if u == &self.item => {
                    return Err(KgError::NoReplacementCandidate(self.item.id()));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// The object a correctly updated model should report.
    pub fn post_object(&self) -> Option<&str> {
        self.updated.as_ref().map(|u| u.object.as_str())
    }
}

/// Build the update request for `fact`.
///
/// The replacement object is `replacement` when given, otherwise a seeded pick
/// among sibling objects (same relation, subject at the same level). Unlearning
/// without any candidate yields a spec with no redirection target.
pub fn derive_intervention(
    kg: &KnowledgeGraph,
    fact: &FactTriple,
    mode: InterventionMode,
    replacement: Option<&str>,
    seed: u64,
) -> Result<InterventionSpec, KgError> {
    if !kg.contains_fact(fact) {
        return Err(KgError::FactNotFound(fact.id()));
    }
    let object = match replacement {
        Some(r) if r == fact.object => return Err(KgError::NoReplacementCandidate(fact.id())),
        Some(r) => Some(r.to_string()),
        None => {
            let siblings = kg.sibling_objects(fact);
            let mut rng = rng::stream(seed, &format!("intervention:{}", fact.id()));
            siblings.choose(&mut rng).cloned()
        }
    };
    if mode == InterventionMode::Edit && object.is_none() {
        return Err(KgError::NoReplacementCandidate(fact.id()));
    }
    Ok(InterventionSpec {
        mode,
        item: fact.clone(),
        updated: object.map(|o| fact.with_object(o)),
        scope: BTreeSet::from([fact.subject.clone()]),
        retain_policy: RetainPolicy::default(),
    })
}

/// Node ids within `radius` hops of the intervened subject, excluding the subject.
pub fn related_probeset(
    kg: &KnowledgeGraph,
    spec: &InterventionSpec,
    radius: u32,
) -> Result<BTreeSet<String>, KgError> {
    if radius < 1 {
        return Err(KgError::InvalidArgument("radius must be at least 1".into()));
    }
    Ok(kg
        .reachable(&spec.item.subject)?
        .into_iter()
        .filter(|&(_, d)| d >= 1 && d <= radius)
        .map(|(n, _)| n.id.clone())
        .collect())
}

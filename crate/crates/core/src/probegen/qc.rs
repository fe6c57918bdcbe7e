use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{McqItem, ProbeType};
use crate::kg::{InterventionSpec, KnowledgeGraph};
use crate::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcFailure {
    Format,
    Factual,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcResult {
    pub ok: bool,
    pub failures: Vec<QcFailure>,
}

impl QcResult {
    fn from_failures(failures: Vec<QcFailure>) -> Self {
        Self {
            ok: failures.is_empty(),
            failures,
        }
    }
}

/// The answer string an item keyed for `item.keyed_phase` must hold.
///
/// Probes on the intervened fact answer with its object (the updated one when
/// keyed post); reverse probes answer with the subject. Probes on any other
/// fact keep that fact's object in both phases. `None` when the probe's fact is
/// unknown or a post key is asked of an intervention without an update.
pub fn expected_answer(item: &McqItem, kg: &KnowledgeGraph, spec: &InterventionSpec) -> Option<String> {
    let fact = kg.fact_by_id(&item.probe.fact_id)?;
    if item.probe.probe_type == ProbeType::Reverse {
        return Some(kg.display(&fact.subject).to_string());
    }
    let object = if fact == &spec.item && item.keyed_phase == Phase::Post {
        spec.post_object()?
    } else {
        fact.object.as_str()
    };
    Some(kg.display(object).to_string())
}

/// Format, factual, and distractor checks. Failures are data, never errors.
pub fn validate_item(item: &McqItem, kg: &KnowledgeGraph, spec: &InterventionSpec) -> QcResult {
    let mut failures = Vec::new();
    let distinct: BTreeSet<&str> = item.options.iter().map(String::as_str).collect();

    let well_formed = item.options.len() == 4
        && item.correct_index < item.options.len()
        && distinct.len() == item.options.len()
        && item.options.iter().all(|o| !o.trim().is_empty())
        && !item.probe.question.trim().is_empty()
        && !item.probe.question.contains("{object}")
        && item.probe.check_invariants().is_ok();
    if !well_formed {
        failures.push(QcFailure::Format);
    }

    let correct = item.correct_option();
    if correct.is_none() || correct.map(str::to_string) != expected_answer(item, kg, spec) {
        failures.push(QcFailure::Factual);
    }

    if let Some(correct) = correct {
        let distractors: Vec<&str> = item
            .options
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != item.correct_index)
            .map(|(_, o)| o.as_str())
            .collect();
        let unique: BTreeSet<&str> = distractors.iter().copied().collect();
        if distractors.contains(&correct) || unique.len() != distractors.len() {
            failures.push(QcFailure::Distractor);
        }
    }
    QcResult::from_failures(failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{derive_intervention, FactTriple, InterventionMode, KgNode, NodeLevel};
    use crate::probegen::{build_mcq, Polarity, Probe};

    fn setup() -> (KnowledgeGraph, InterventionSpec, McqItem) {
        let kg = KnowledgeGraph::new(
            "physics",
            vec![KgNode {
                id: "Theory of General Relativity".into(),
                label: "Theory of General Relativity".into(),
                level: NodeLevel::Root,
                domain: None,
            }],
            vec![FactTriple::new("Theory of General Relativity", "published_in", "1915")],
        )
        .unwrap();
        let fact = kg.edges()[0].clone();
        let spec = derive_intervention(&kg, &fact, InterventionMode::Edit, Some("1920"), 0).unwrap();
        let probe = Probe {
            probe_id: "p".into(),
            fact_id: fact.id(),
            domain: "physics".into(),
            branch: NodeLevel::Root,
            probe_type: ProbeType::Direct,
            polarity: Polarity::Positive,
            question: "When was the Theory of General Relativity published?".into(),
            hop_distance: 0,
            pair_id: None,
            tags: vec![],
        };
        let item = build_mcq(&probe, "1915", Some("1920"), &kg, Phase::Pre, 1).unwrap();
        (kg, spec, item)
    }

    #[test]
    fn well_formed_item_passes() {
        let (kg, spec, item) = setup();
        assert_eq!(
            validate_item(&item, &kg, &spec),
            QcResult {
                ok: true,
                failures: vec![]
            }
        );
    }

    #[test]
    fn duplicate_options_fail_format_and_distractor() {
        let (kg, spec, mut item) = setup();
        let correct = item.correct_option().unwrap().to_string();
        let other = (item.correct_index + 1) % 4;
        item.options[other] = correct;
        let r = validate_item(&item, &kg, &spec);
        assert_eq!(r.failures, [QcFailure::Format, QcFailure::Distractor]);
        assert!(!r.ok);
    }

    #[test]
    fn post_key_holding_original_is_factual_failure() {
        let (kg, spec, mut item) = setup();
        item.keyed_phase = Phase::Post;
        assert_eq!(validate_item(&item, &kg, &spec).failures, [QcFailure::Factual]);
    }
}

use rand::seq::SliceRandom;

use super::{McqItem, Probe, ProbeError, ProbeType};
use crate::kg::{KnowledgeGraph, NodeLevel};
use crate::{rng, Phase};

/// Offsets tried, in order, when a numeric answer needs nearby distractors.
pub const YEAR_OFFSETS: [i64; 6] = [-3, 3, -2, 2, -5, 5];

const DISTRACTORS: usize = 3;

/// Nearby values for an integer literal, in [`YEAR_OFFSETS`] order. Empty for
/// anything that is not a plain integer.
pub fn numeric_perturbations(value: &str) -> Vec<String> {
    let Ok(n) = value.trim().parse::<i64>() else {
        return Vec::new();
    };
    YEAR_OFFSETS
        .iter()
        .filter_map(|off| n.checked_add(*off))
        .map(|v| v.to_string())
        .collect()
}

/// Labels of nodes at `level` first, then the rest, each group sorted.
fn entity_pool(kg: &KnowledgeGraph, level: NodeLevel) -> Vec<String> {
    let mut same: Vec<String> = kg.nodes_at(level).map(|n| n.label.clone()).collect();
    let mut other: Vec<(NodeLevel, String)> = kg
        .nodes()
        .iter()
        .filter(|n| n.level != level)
        .map(|n| (n.level, n.label.clone()))
        .collect();
    same.sort();
    other.sort();
    same.extend(other.into_iter().map(|(_, l)| l));
    same
}

/// Cast `probe` as a four-choice item keyed on `correct_answer`.
///
/// `counterpart` is the answer under the other world state (the original object
/// for a post-keyed item, the updated one for a pre-keyed item). It is always
/// placed among the distractors, so both keyed versions of an item carry the
/// same four options. Remaining distractors come from sibling objects, then
/// numeric perturbations of the original value; entity answers draw from node
/// labels of the same level. Options are sorted and then shuffled with a stream
/// derived from `probe_id`, which makes the order independent of `keyed_phase`.
pub fn build_mcq(
    probe: &Probe,
    correct_answer: &str,
    counterpart: Option<&str>,
    kg: &KnowledgeGraph,
    keyed_phase: Phase,
    seed: u64,
) -> Result<McqItem, ProbeError> {
    let fact = kg
        .fact_by_id(&probe.fact_id)
        .ok_or_else(|| ProbeError::UnknownFact(probe.fact_id.clone()))?;

    let pool: Vec<String> = if probe.probe_type == ProbeType::Reverse {
        entity_pool(kg, kg.level_of(&fact.subject)?)
    } else if let Some(node) = kg.node(&fact.object) {
        entity_pool(kg, node.level)
    } else {
        let anchor = match (keyed_phase, counterpart) {
            (Phase::Post, Some(original)) => original,
            _ => correct_answer,
        };
        let mut pool = kg.sibling_objects(fact);
        pool.extend(numeric_perturbations(anchor));
        pool
    };

    let mut options = vec![correct_answer.to_string()];
    for candidate in counterpart.map(str::to_string).into_iter().chain(pool) {
        if options.len() == DISTRACTORS + 1 {
            break;
        }
        if !candidate.trim().is_empty() && !options.contains(&candidate) {
            options.push(candidate);
        }
    }
    if options.len() < DISTRACTORS + 1 {
        return Err(ProbeError::DistractorShortage {
            probe_id: probe.probe_id.clone(),
            found: options.len() - 1,
        });
    }

    options.sort();
    options.shuffle(&mut rng::stream(seed, &format!("mcq:{}", probe.probe_id)));
    let correct_index = options
        .iter()
        .position(|o| o == correct_answer)
        .expect("correct answer is among the options");
    Ok(McqItem {
        probe: probe.clone(),
        options,
        correct_index,
        keyed_phase,
    })
}

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{check_unit, index_answers, AnswerRecord, Distance, MetricsError};
use crate::geometry::kl_divergence;
use crate::kg::InterventionMode;
use crate::probegen::{McqItem, ProbeType, CONFLICT_NEW_TAG, CONFLICT_OLD_TAG};
use crate::Phase;

/// Probes about facts other than the intervened one whose subject lies within
/// `radius` hops of the intervened subject. The intervened fact is the fact of
/// the hop-0 probes; probes on it (including multi-hop ones reaching it through
/// a neighbour) are expected to change and so are not collateral.
pub fn related_probes(key: &[McqItem], radius: u32) -> BTreeSet<String> {
    let targets: BTreeSet<&str> = key
        .iter()
        .filter(|i| i.probe.hop_distance == 0)
        .map(|i| i.probe.fact_id.as_str())
        .collect();
    key.iter()
        .filter(|i| (1..=radius).contains(&i.probe.hop_distance) && !targets.contains(i.probe.fact_id.as_str()))
        .map(|i| i.probe.probe_id.clone())
        .collect()
}

fn paired<'a>(
    pre: &'a [AnswerRecord],
    post: &'a [AnswerRecord],
    related: &'a BTreeSet<String>,
) -> Result<Vec<(&'a AnswerRecord, &'a AnswerRecord)>, MetricsError> {
    if related.is_empty() {
        return Err(MetricsError::EmptyFilter);
    }
    let pre = index_answers(pre, Phase::Pre)?;
    let post = index_answers(post, Phase::Post)?;
    related
        .iter()
        .map(|id| {
            let a = pre.get(id.as_str()).ok_or_else(|| MetricsError::MissingAnswer {
                probe_id: id.clone(),
                phase: Phase::Pre,
            })?;
            let b = post.get(id.as_str()).ok_or_else(|| MetricsError::MissingAnswer {
                probe_id: id.clone(),
                phase: Phase::Post,
            })?;
            Ok((*a, *b))
        })
        .collect()
}

/// Collateral change ratio: mean distance between post and pre predictions
/// over `related`. Label change is the indicator of a different chosen index;
/// KL is `KL(post ‖ pre)` over the four-way choice distribution with
/// `kl_smoothing` added to zero entries.
pub fn ccr(
    pre: &[AnswerRecord],
    post: &[AnswerRecord],
    related: &BTreeSet<String>,
    distance: Distance,
    kl_smoothing: f64,
) -> Result<f64, MetricsError> {
    let pairs = paired(pre, post, related)?;
    let mut total = 0.0;
    for (a, b) in &pairs {
        total += match distance {
            Distance::LabelChange => f64::from(u8::from(a.chosen_index != b.chosen_index)),
            Distance::Kl => {
                let p = b
                    .choice_probs
                    .as_ref()
                    .ok_or_else(|| MetricsError::MissingProbs(b.probe_id.clone()))?;
                let q = a
                    .choice_probs
                    .as_ref()
                    .ok_or_else(|| MetricsError::MissingProbs(a.probe_id.clone()))?;
                let smoothing = (kl_smoothing > 0.0).then_some(kl_smoothing);
                kl_divergence(p, q, smoothing).map_err(|e| MetricsError::InvalidRecord(e.to_string()))?
            }
        };
    }
    Ok(total / pairs.len() as f64)
}

/// Residual retention: share of `related` probes whose post prediction equals
/// the pre prediction.
pub fn rr(pre: &[AnswerRecord], post: &[AnswerRecord], related: &BTreeSet<String>) -> Result<f64, MetricsError> {
    let pairs = paired(pre, post, related)?;
    let same = pairs.iter().filter(|(a, b)| a.chosen_index == b.chosen_index).count();
    Ok(same as f64 / pairs.len() as f64)
}

/// Residual retention against the original-world key instead of the model's
/// own pre prediction.
pub fn rr_original_key(
    post: &[AnswerRecord],
    pre_key: &[McqItem],
    related: &BTreeSet<String>,
) -> Result<f64, MetricsError> {
    if related.is_empty() {
        return Err(MetricsError::EmptyFilter);
    }
    let post = index_answers(post, Phase::Post)?;
    let key: HashMap<&str, &McqItem> = pre_key.iter().map(|i| (i.probe.probe_id.as_str(), i)).collect();
    let mut same = 0;
    for id in related {
        let item = key
            .get(id.as_str())
            .ok_or_else(|| MetricsError::UnknownProbe(id.clone()))?;
        let b = post.get(id.as_str()).ok_or_else(|| MetricsError::MissingAnswer {
            probe_id: id.clone(),
            phase: Phase::Post,
        })?;
        if b.chosen_index == item.correct_index {
            same += 1;
        }
    }
    Ok(same as f64 / related.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadProxies {
    pub over_spread: Option<f64>,
    pub under_spread: Option<f64>,
}

/// Editing reports `1 − multihop_acc` as over-spreading; unlearning reports
/// `multihop_acc` as under-spreading.
pub fn spread_proxies(
    direct_acc: f64,
    multihop_acc: f64,
    mode: InterventionMode,
) -> Result<SpreadProxies, MetricsError> {
    check_unit("direct_acc", direct_acc)?;
    check_unit("multihop_acc", multihop_acc)?;
    Ok(match mode {
        InterventionMode::Edit => SpreadProxies {
            over_spread: Some(1.0 - multihop_acc),
            under_spread: None,
        },
        InterventionMode::Unlearn => SpreadProxies {
            over_spread: None,
            under_spread: Some(multihop_acc),
        },
    })
}

/// A contradiction pair with the option indices that affirm each statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub pair_id: String,
    pub old_probe: String,
    pub new_probe: String,
    /// Index of the original object in the old-claim probe.
    pub original_index: usize,
    /// Index of the updated object in the new-claim probe.
    pub updated_index: usize,
}

/// Pairs conflict probes by `pair_id`. The original object is read from the
/// pre key and the updated object from the post key.
pub fn conflict_pairs(pre_key: &[McqItem], post_key: &[McqItem]) -> Result<Vec<ConflictPair>, MetricsError> {
    let mut groups: BTreeMap<&str, Vec<&McqItem>> = BTreeMap::new();
    for item in pre_key.iter().filter(|i| i.probe.probe_type == ProbeType::Conflict) {
        let pair = item
            .probe
            .pair_id
            .as_deref()
            .ok_or_else(|| MetricsError::UnpairedProbe(item.probe.probe_id.clone()))?;
        groups.entry(pair).or_default().push(item);
    }
    let post: HashMap<&str, &McqItem> = post_key.iter().map(|i| (i.probe.probe_id.as_str(), i)).collect();
    groups
        .into_iter()
        .map(|(pair_id, members)| {
            let find = |tag: &str| {
                let mut hits = members.iter().filter(|i| i.probe.has_tag(tag));
                match (hits.next(), hits.next()) {
                    (Some(one), None) => Ok(*one),
                    _ => Err(MetricsError::UnpairedProbe(members[0].probe.probe_id.clone())),
                }
            };
            if members.len() != 2 {
                return Err(MetricsError::UnpairedProbe(members[0].probe.probe_id.clone()));
            }
            let old = find(CONFLICT_OLD_TAG)?;
            let new = find(CONFLICT_NEW_TAG)?;
            let new_post = post
                .get(new.probe.probe_id.as_str())
                .ok_or_else(|| MetricsError::UnpairedProbe(new.probe.probe_id.clone()))?;
            if new_post.options != new.options {
                return Err(MetricsError::InvalidRecord(format!(
                    "`{}` has different options in the pre and post keys",
                    new.probe.probe_id
                )));
            }
            Ok(ConflictPair {
                pair_id: pair_id.to_string(),
                old_probe: old.probe.probe_id.clone(),
                new_probe: new.probe.probe_id.clone(),
                original_index: old.correct_index,
                updated_index: new_post.correct_index,
            })
        })
        .collect()
}

/// Share of pairs where the model affirms both statements: the original object
/// on the old-claim probe and the updated object on the new-claim probe.
pub fn conflict_rate(answers: &[AnswerRecord], pairs: &[ConflictPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyFilter);
    }
    let phase = answers.first().map(|a| a.phase).unwrap_or(Phase::Post);
    let by_id = index_answers(answers, phase)?;
    let chosen = |id: &str| {
        by_id
            .get(id)
            .map(|a| a.chosen_index)
            .ok_or_else(|| MetricsError::MissingAnswer {
                probe_id: id.to_string(),
                phase,
            })
    };
    let mut both = 0;
    for p in pairs {
        if chosen(&p.old_probe)? == p.original_index && chosen(&p.new_probe)? == p.updated_index {
            both += 1;
        }
    }
    Ok(both as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub id_gain: f64,
    pub ood_drift: f64,
}

/// Package in-domain gain with out-of-domain drift (`ood_pre − ood_post`;
/// negative when OOD accuracy improved).
pub fn tradeoff_report(id_gain: f64, ood_pre: f64, ood_post: f64) -> Result<Tradeoff, MetricsError> {
    if !(-1.0..=1.0).contains(&id_gain) {
        return Err(MetricsError::OutOfRange {
            name: "id_gain",
            value: id_gain,
        });
    }
    check_unit("ood_pre", ood_pre)?;
    check_unit("ood_post", ood_post)?;
    Ok(Tradeoff {
        id_gain,
        ood_drift: ood_pre - ood_post,
    })
}

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{AnswerRecord, MetricsError};
use crate::kg::NodeLevel;
use crate::probegen::{McqItem, Probe, ProbeType};
use crate::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "adversarial")]
    Adversarial,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Id => "ID",
            Split::Ood => "OOD",
            Split::Adversarial => "adversarial",
        }
    }
}

/// A `split:id|ood|adversarial` tag wins; otherwise conflict probes are
/// adversarial and everything else is in-domain.
pub fn split_of(probe: &Probe) -> Split {
    for tag in &probe.tags {
        match tag.strip_prefix("split:").map(str::to_ascii_lowercase).as_deref() {
            Some("id") => return Split::Id,
            Some("ood") => return Split::Ood,
            Some("adversarial") => return Split::Adversarial,
            _ => {}
        }
    }
    if probe.probe_type == ProbeType::Conflict {
        Split::Adversarial
    } else {
        Split::Id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccuracyKey {
    /// Which model state produced the answers.
    pub answer_phase: Phase,
    /// Which world state the key reflects.
    pub keyed_phase: Phase,
    pub probe_type: ProbeType,
    pub branch: NodeLevel,
    pub domain: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    #[serde(flatten)]
    pub key: AccuracyKey,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

fn answer_map(answers: &[AnswerRecord]) -> Result<HashMap<&str, &AnswerRecord>, MetricsError> {
    let mut map = HashMap::with_capacity(answers.len());
    for a in answers {
        a.validate()?;
        if map.insert(a.probe_id.as_str(), a).is_some() {
            return Err(MetricsError::DuplicateAnswer {
                probe_id: a.probe_id.clone(),
                phase: a.phase,
            });
        }
    }
    Ok(map)
}

/// `(correct, total)` over the filtered key items.
pub(crate) fn count<F>(answers: &[AnswerRecord], key: &[McqItem], filter: F) -> Result<(usize, usize), MetricsError>
where
    F: Fn(&McqItem) -> bool,
{
    let answers = answer_map(answers)?;
    let by_id: HashMap<&str, &McqItem> = key.iter().map(|i| (i.probe.probe_id.as_str(), i)).collect();
    // Deterministic error reporting: the smallest unknown id.
    if let Some(unknown) = answers.keys().filter(|id| !by_id.contains_key(*id)).min() {
        return Err(MetricsError::UnknownProbe(unknown.to_string()));
    }
    let mut correct = 0;
    let mut total = 0;
    for item in key.iter().filter(|i| filter(i)) {
        let a = answers
            .get(item.probe.probe_id.as_str())
            .ok_or_else(|| MetricsError::MissingAnswer {
                probe_id: item.probe.probe_id.clone(),
                phase: answers.values().next().map(|a| a.phase).unwrap_or(item.keyed_phase),
            })?;
        total += 1;
        if a.chosen_index == item.correct_index {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyFilter);
    }
    Ok((correct, total))
}

/// Fraction of filtered probes answered with the keyed option.
///
/// Every answer must name a probe in `key`, and every filtered probe must be
/// answered.
pub fn score<F>(answers: &[AnswerRecord], key: &[McqItem], filter: F) -> Result<f64, MetricsError>
where
    F: Fn(&McqItem) -> bool,
{
    let (correct, total) = count(answers, key, filter)?;
    Ok(correct as f64 / total as f64)
}

/// Accuracy per (probe type, branch, domain, split) for one answer set against
/// one key.
pub(crate) fn cells(
    answer_phase: Phase,
    answers: &[AnswerRecord],
    key: &[McqItem],
) -> Result<Vec<AccuracyCell>, MetricsError> {
    let mut groups: BTreeMap<AccuracyKey, ()> = BTreeMap::new();
    for item in key {
        groups.insert(
            AccuracyKey {
                answer_phase,
                keyed_phase: item.keyed_phase,
                probe_type: item.probe.probe_type,
                branch: item.probe.branch,
                domain: item.probe.domain.clone(),
                split: split_of(&item.probe),
            },
            (),
        );
    }
    groups
        .into_keys()
        .map(|k| {
            let (correct, n) = count(answers, key, |i| {
                i.keyed_phase == k.keyed_phase
                    && i.probe.probe_type == k.probe_type
                    && i.probe.branch == k.branch
                    && i.probe.domain == k.domain
                    && split_of(&i.probe) == k.split
            })?;
            Ok(AccuracyCell {
                key: k,
                n,
                correct,
                accuracy: correct as f64 / n as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tests::{answers, key};

    #[test]
    fn eleven_of_twenty_four() {
        let key = key(24);
        let picks: Vec<usize> = key
            .iter()
            .enumerate()
            .map(|(i, it)| {
                if i < 11 {
                    it.correct_index
                } else {
                    (it.correct_index + 1) % 4
                }
            })
            .collect();
        let acc = score(&answers(&key, &picks, Phase::Post), &key, |_| true).unwrap();
        assert!((acc - 11.0 / 24.0).abs() < 1e-15);
        assert_eq!(crate::metrics::format_percent(acc), "45.83");
    }

    #[test]
    fn all_correct() {
        let key = key(24);
        let picks: Vec<usize> = key.iter().map(|i| i.correct_index).collect();
        assert_eq!(score(&answers(&key, &picks, Phase::Pre), &key, |_| true).unwrap(), 1.0);
    }

    #[test]
    fn empty_filter_and_missing() {
        let key = key(4);
        let picks = vec![0; 4];
        let a = answers(&key, &picks, Phase::Pre);
        assert!(matches!(score(&a, &key, |_| false), Err(MetricsError::EmptyFilter)));
        assert!(matches!(
            score(&a[..3], &key, |_| true),
            Err(MetricsError::MissingAnswer { .. })
        ));
        assert!(matches!(
            score(&a, &key[..3], |_| true),
            Err(MetricsError::UnknownProbe(_))
        ));
    }

    #[test]
    fn split_tags() {
        let mut k = key(1);
        assert_eq!(split_of(&k[0].probe), Split::Id);
        k[0].probe.tags.push("split:OOD".into());
        assert_eq!(split_of(&k[0].probe), Split::Ood);
    }
}

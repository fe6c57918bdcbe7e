use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{McqItem, Polarity, Probe, ProbeError, ProbeType};
use crate::jsonl;
use crate::kg::NodeLevel;
use crate::Phase;

/// One line of a probe JSONL file: a probe with its options and key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub probe_id: String,
    pub fact_id: String,
    pub domain: String,
    pub branch: NodeLevel,
    pub probe_type: ProbeType,
    pub polarity: Polarity,
    pub question: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub keyed_phase: Phase,
    pub hop_distance: u32,
    pub pair_id: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl From<&McqItem> for ProbeRecord {
    fn from(item: &McqItem) -> Self {
        let p = &item.probe;
        Self {
            probe_id: p.probe_id.clone(),
            fact_id: p.fact_id.clone(),
            domain: p.domain.clone(),
            branch: p.branch,
            probe_type: p.probe_type,
            polarity: p.polarity,
            question: p.question.clone(),
            options: item.options.clone(),
            correct_index: item.correct_index,
            keyed_phase: item.keyed_phase,
            hop_distance: p.hop_distance,
            pair_id: p.pair_id.clone(),
            tags: p.tags.clone(),
        }
    }
}

impl TryFrom<ProbeRecord> for McqItem {
    type Error = ProbeError;

    fn try_from(r: ProbeRecord) -> Result<Self, Self::Error> {
        if r.options.len() != 4 {
            return Err(ProbeError::InvalidRecord(format!(
                "`{}` has {} options, expected 4",
                r.probe_id,
                r.options.len()
            )));
        }
        if r.correct_index > 3 {
            return Err(ProbeError::InvalidRecord(format!(
                "`{}` has correct_index {}",
                r.probe_id, r.correct_index
            )));
        }
        let probe = Probe {
            probe_id: r.probe_id,
            fact_id: r.fact_id,
            domain: r.domain,
            branch: r.branch,
            probe_type: r.probe_type,
            polarity: r.polarity,
            question: r.question,
            hop_distance: r.hop_distance,
            pair_id: r.pair_id,
            tags: r.tags,
        };
        probe.check_invariants()?;
        Ok(McqItem {
            probe,
            options: r.options,
            correct_index: r.correct_index,
            keyed_phase: r.keyed_phase,
        })
    }
}

/// Read and schema-check a probe JSONL file.
pub fn load_probe_file(path: &Path) -> Result<Vec<McqItem>, ProbeError> {
    jsonl::read::<ProbeRecord>(path)?
        .into_iter()
        .map(McqItem::try_from)
        .collect()
}

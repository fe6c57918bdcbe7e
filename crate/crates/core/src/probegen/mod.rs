//! Probe and training-data generation.
//!
//! The pipeline runs per intervened fact: templates for the fact's branch level
//! are instantiated, six probe types are built from them, each probe becomes a
//! four-choice item keyed once against the original world (`pre`) and once
//! against the updated world (`post`), and training statements are expanded to
//! the requested data scales. Both keyed versions of an item share the same
//! option order so that answer indices are comparable across phases.

mod bench;
mod mcq;
mod probes;
mod qc;
mod record;
mod scale;
mod templates;

pub use bench::{
    generate_benchmark, load_config, planned_counts, BenchmarkConfig, BenchmarkSummary, CellSummary, GeneratorKind,
    PlannedCounts, TargetOverride,
};
pub use mcq::{build_mcq, numeric_perturbations, YEAR_OFFSETS};
pub use probes::{build_probes, relation_phrase};
pub use qc::{expected_answer, validate_item, QcFailure, QcResult};
pub use record::{load_probe_file, ProbeRecord};
pub use scale::{expand_scale, training_statements, ScaleTag, TrainingRecord, TrainingSample};
pub use templates::{builtin_bank, instantiate_templates, Template, TEMPLATE_STYLES};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fsutil::OutputError;
use crate::jsonl::JsonlError;
use crate::kg::{KgError, NodeLevel};
use crate::Phase;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("template bank for {0} is empty")]
    EmptyBank(NodeLevel),
    #[error("invalid template `{0}`")]
    InvalidTemplate(String),
    #[error("template generation failed: {0}")]
    GenerationFailure(String),
    #[error("no node at hop distance >= {needed} from `{subject}`")]
    MissingHierarchy { subject: String, needed: u32 },
    #[error("no fact outside the intervention scope of `{0}` is reachable for contextual probes")]
    NoContextFacts(String),
    #[error("intervention on `{0}` has no updated fact")]
    MissingUpdate(String),
    #[error("probe references unknown fact `{0}`")]
    UnknownFact(String),
    #[error("probe `{probe_id}`: only {found} distinct distractor(s) available, 3 needed")]
    DistractorShortage { probe_id: String, found: usize },
    #[error("only {available} distinct variant(s) available, {requested} requested")]
    VariantExhaustion { available: usize, requested: usize },
    #[error("scale {0} is not one of 1, 10, 100, 1000, 10000")]
    InvalidScale(u64),
    #[error("item `{probe_id}` ({phase}) failed quality control: {failures:?}")]
    QcFailure {
        probe_id: String,
        phase: Phase,
        failures: Vec<QcFailure>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("probe record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeType {
    Direct,
    Reverse,
    Conflict,
    MultiHop,
    Comparison,
    Contextual,
}

impl ProbeType {
    pub const ALL: [ProbeType; 6] = [
        ProbeType::Direct,
        ProbeType::Reverse,
        ProbeType::Conflict,
        ProbeType::MultiHop,
        ProbeType::Comparison,
        ProbeType::Contextual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeType::Direct => "direct",
            ProbeType::Reverse => "reverse",
            ProbeType::Conflict => "conflict",
            ProbeType::MultiHop => "multi_hop",
            ProbeType::Comparison => "comparison",
            ProbeType::Contextual => "contextual",
        }
    }

    /// Polarity every probe of this type carries. Conflict probes may be either;
    /// the generator marks both members of a pair positive.
    pub fn default_polarity(self) -> Polarity {
        match self {
            ProbeType::Contextual => Polarity::Preservation,
            _ => Polarity::Positive,
        }
    }
}

impl fmt::Display for ProbeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeType {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProbeType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProbeError::InvalidArgument(format!("unknown probe type `{s}`")))
    }
}

/// Q⁺ (prediction should change) or Q⁻ (prediction should stay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Preservation,
}

/// Tag marking which member of a conflict pair a probe is.
pub const CONFLICT_OLD_TAG: &str = "conflict:old";
pub const CONFLICT_NEW_TAG: &str = "conflict:new";

/// A question tied to one fact and one branch level, not yet cast as an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub probe_id: String,
    pub fact_id: String,
    pub domain: String,
    pub branch: NodeLevel,
    pub probe_type: ProbeType,
    pub polarity: Polarity,
    /// May contain an unbound `{object}` placeholder (reverse probes) until the
    /// keyed object is known; see [`Probe::bind_object`].
    pub question: String,
    pub hop_distance: u32,
    pub pair_id: Option<String>,
    pub tags: Vec<String>,
}

impl Probe {
    pub fn bind_object(&self, object: &str) -> Probe {
        Probe {
            question: self.question.replace("{object}", object),
            ..self.clone()
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn check_invariants(&self) -> Result<(), ProbeError> {
        if self.probe_type == ProbeType::Conflict && self.pair_id.is_none() {
            return Err(ProbeError::InvalidRecord(format!(
                "conflict probe `{}` has no pair_id",
                self.probe_id
            )));
        }
        let allowed = match self.probe_type {
            ProbeType::Conflict => true,
            t => t.default_polarity() == self.polarity,
        };
        if !allowed {
            return Err(ProbeError::InvalidRecord(format!(
                "probe `{}` of type {} cannot have polarity {:?}",
                self.probe_id, self.probe_type, self.polarity
            )));
        }
        Ok(())
    }
}

/// A four-choice item keyed against one phase's world state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqItem {
    pub probe: Probe,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub keyed_phase: Phase,
}

impl McqItem {
    pub fn correct_option(&self) -> Option<&str> {
        self.options.get(self.correct_index).map(String::as_str)
    }

    pub fn option_index(&self, text: &str) -> Option<usize> {
        self.options.iter().position(|o| o == text)
    }
}

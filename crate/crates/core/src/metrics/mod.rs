//! Scoring of answer logs against probe keys.
//!
//! Accuracy is sliced by answer phase, keyed phase, probe type, branch, domain
//! and split. Propagation is measured on structurally related probes as the
//! collateral change ratio (mean prediction distance, post vs pre) and residual
//! retention (share of unchanged predictions). Curves over data scale give
//! plasticity, ceilings, and the consistency collapse point; a fixed rule map
//! turns a report into failure modes.
//!
//! The interventions themselves are not run here. The training objective they
//! optimize (task loss, preservation loss weighted by lambda_pres, parameter
//! regularizer weighted by lambda_reg) belongs to the external editing and
//! unlearning tools; only their effects, answer logs and weights, come back in.

mod accuracy;
mod curves;
mod failures;
mod propagation;
mod report;

pub use accuracy::{score, split_of, AccuracyCell, AccuracyKey, Split};
pub use curves::{collapse_point, plasticity_curves, CurveKey, PlasticityCurve};
pub use failures::{classify_failures, FailureInputs, FailureKind, FailureMode, FailureThresholds};
pub use propagation::{
    ccr, conflict_pairs, conflict_rate, related_probes, rr, rr_original_key, spread_proxies, tradeoff_report,
    ConflictPair, SpreadProxies, Tradeoff,
};
pub use report::{evaluate, format_percent, EvalInput, ExternalScores, MetricReport, PrePost};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::kg::InterventionMode;
use crate::probegen::ProbeError;
use crate::Phase;

/// Tolerance on the sum of `choice_probs`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_KL_SMOOTHING: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("answer record: {0}")]
    InvalidRecord(String),
    #[error("no {phase} answer for probe `{probe_id}`")]
    MissingAnswer { probe_id: String, phase: Phase },
    #[error("more than one {phase} answer for probe `{probe_id}`")]
    DuplicateAnswer { probe_id: String, phase: Phase },
    #[error("answer refers to unknown probe `{0}`")]
    UnknownProbe(String),
    #[error("filter selects no probes")]
    EmptyFilter,
    #[error("probe `{0}` has no choice_probs, which KL distance needs")]
    MissingProbs(String),
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("conflict probe `{0}` has no partner")]
    UnpairedProbe(String),
    #[error("curves do not share scale points")]
    CurveMismatch,
    #[error("curve {0} has fewer than two scale points")]
    SparseCurve(String),
    #[error("missing baseline for {0}")]
    MissingBaseline(&'static str),
    #[error("eval config: {0}")]
    Config(String),
}

/// One line of an answers JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRecord {
    pub probe_id: String,
    pub model_id: String,
    pub phase: Phase,
    pub chosen_index: usize,
    #[serde(default)]
    pub choice_probs: Option<Vec<f64>>,
}

impl AnswerRecord {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.chosen_index > 3 {
            return Err(MetricsError::InvalidRecord(format!(
                "`{}`: chosen_index {} is not in 0..=3",
                self.probe_id, self.chosen_index
            )));
        }
        if let Some(p) = &self.choice_probs {
            let sum: f64 = p.iter().sum();
            if p.len() != 4 || p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(MetricsError::InvalidRecord(format!(
                    "`{}`: choice_probs must be 4 non-negative values summing to 1",
                    self.probe_id
                )));
            }
        }
        Ok(())
    }
}

pub fn load_answers(path: &Path) -> Result<Vec<AnswerRecord>, MetricsError> {
    let records: Vec<AnswerRecord> = jsonl::read(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Answers of one phase by probe id; duplicates and other phases are rejected.
pub(crate) fn index_answers(
    answers: &[AnswerRecord],
    phase: Phase,
) -> Result<HashMap<&str, &AnswerRecord>, MetricsError> {
    let mut map = HashMap::with_capacity(answers.len());
    for a in answers {
        a.validate()?;
        if a.phase != phase {
            return Err(MetricsError::InvalidRecord(format!(
                "`{}` is a {} answer where {phase} answers were expected",
                a.probe_id, a.phase
            )));
        }
        if map.insert(a.probe_id.as_str(), a).is_some() {
            return Err(MetricsError::DuplicateAnswer {
                probe_id: a.probe_id.clone(),
                phase,
            });
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    LabelChange,
    Kl,
}

/// What residual retention compares post predictions against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RrReference {
    /// The model's own pre-intervention prediction.
    #[default]
    PrePrediction,
    /// The original-world key.
    OriginalKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: InterventionMode,
    pub eta_plus: f64,
    pub epsilon: f64,
    pub distance: Distance,
    pub collapse_delta: f64,
    pub reverse_floor: f64,
    pub radius: u32,
    pub rr_reference: RrReference,
    pub kl_smoothing: f64,
    pub thresholds: FailureThresholds,
    pub external: ExternalScores,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: InterventionMode::Edit,
            eta_plus: 0.1,
            epsilon: 0.1,
            distance: Distance::LabelChange,
            collapse_delta: 0.10,
            reverse_floor: 0.50,
            radius: 2,
            rr_reference: RrReference::PrePrediction,
            kl_smoothing: DEFAULT_KL_SMOOTHING,
            thresholds: FailureThresholds::default(),
            external: ExternalScores::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |msg: &str| Err(MetricsError::Config(msg.to_string()));
        if !(self.eta_plus >= 0.0) || !(self.epsilon >= 0.0) {
            return bad("eta_plus and epsilon must be non-negative");
        }
        if !(self.collapse_delta > 0.0 && self.collapse_delta < 1.0) {
            return bad("collapse_delta must lie in (0, 1)");
        }
        if !(self.reverse_floor > 0.0 && self.reverse_floor <= 1.0) {
            return bad("reverse_floor must lie in (0, 1]");
        }
        if self.radius == 0 {
            return bad("radius must be at least 1");
        }
        if !(self.kl_smoothing >= 0.0) {
            return bad("kl_smoothing must be non-negative");
        }
        self.thresholds.validate()
    }

    /// TOML or JSON by extension.
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| MetricsError::Config(format!("{}: {e}", path.display())))?;
        let cfg: EvalConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| MetricsError::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| MetricsError::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<f64, MetricsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(MetricsError::OutOfRange { name, value })
    }
}

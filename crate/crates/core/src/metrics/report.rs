use serde::{Deserialize, Serialize};

use super::accuracy::{cells, count};
use super::{
    ccr, classify_failures, conflict_pairs, conflict_rate, index_answers, related_probes, rr, rr_original_key,
    split_of, spread_proxies, tradeoff_report, AccuracyCell, AnswerRecord, Distance, EvalConfig, FailureInputs,
    FailureMode, MetricsError, RrReference, Split, Tradeoff,
};
use crate::geometry::kl_divergence;
use crate::kg::InterventionMode;
use crate::probegen::{McqItem, Polarity, ProbeType, ScaleTag};
use crate::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrePost {
    pub pre: f64,
    pub post: f64,
}

/// Scores measured outside the probe set, such as judge-rated instruction
/// following or accuracy on a truthfulness benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalScores {
    pub instruction_following: Option<PrePost>,
    pub truthfulness: Option<PrePost>,
}

/// Keyed items and one answer log per model state.
#[derive(Debug, Clone, Default)]
pub struct EvalInput {
    pub pre_key: Vec<McqItem>,
    pub post_key: Vec<McqItem>,
    pub pre_answers: Vec<AnswerRecord>,
    pub post_answers: Vec<AnswerRecord>,
}

impl EvalInput {
    /// Split a mixed list of keyed items by keyed phase.
    pub fn from_items(items: Vec<McqItem>, pre_answers: Vec<AnswerRecord>, post_answers: Vec<AnswerRecord>) -> Self {
        let (pre_key, post_key) = items.into_iter().partition(|i| i.keyed_phase == Phase::Pre);
        Self {
            pre_key,
            post_key,
            pre_answers,
            post_answers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: Option<String>,
    pub mode: InterventionMode,
    pub distance: Distance,
    pub radius: u32,
    pub n_probes: usize,
    pub accuracy: Vec<AccuracyCell>,
    pub related_probes: usize,
    pub ccr: Option<f64>,
    pub rr: Option<f64>,
    pub rr_original_key: Option<f64>,
    pub direct_accuracy: Option<f64>,
    pub multihop_accuracy: Option<f64>,
    pub over_spread: Option<f64>,
    pub under_spread: Option<f64>,
    pub conflict_pairs: usize,
    pub conflict_rate: Option<f64>,
    pub conflict_rate_pre: Option<f64>,
    pub eta_plus_pass_rate: Option<f64>,
    pub epsilon_pass_rate: Option<f64>,
    pub tradeoff: Option<Tradeoff>,
    pub collapse_scale: Option<ScaleTag>,
    pub failure_modes: Vec<FailureMode>,
}

/// Two-decimal percentage, the convention of published accuracy tables.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}

fn optional<T>(result: Result<T, MetricsError>) -> Result<Option<T>, MetricsError> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::EmptyFilter) => Ok(None),
        Err(e) => Err(e),
    }
}

fn rate<F>(answers: &[AnswerRecord], key: &[McqItem], filter: F) -> Result<Option<f64>, MetricsError>
where
    F: Fn(&McqItem) -> bool,
{
    optional(count(answers, key, filter).map(|(c, n)| c as f64 / n as f64))
}

fn smoothing(cfg: &EvalConfig) -> Option<f64> {
    (cfg.kl_smoothing > 0.0).then_some(cfg.kl_smoothing)
}

/// Share of positive probes whose post answer is within `eta_plus` of the post
/// key: label mismatch, or `−ln p(keyed option)` in KL mode.
fn eta_plus_pass(cfg: &EvalConfig, post: &[AnswerRecord], post_key: &[McqItem]) -> Result<Option<f64>, MetricsError> {
    let answers = index_answers(post, Phase::Post)?;
    let mut pass = 0;
    let mut n = 0;
    for item in post_key.iter().filter(|i| i.probe.polarity == Polarity::Positive) {
        let a = answers
            .get(item.probe.probe_id.as_str())
            .ok_or_else(|| MetricsError::MissingAnswer {
                probe_id: item.probe.probe_id.clone(),
                phase: Phase::Post,
            })?;
        let d = match cfg.distance {
            Distance::LabelChange => f64::from(u8::from(a.chosen_index != item.correct_index)),
            Distance::Kl => {
                let p = a
                    .choice_probs
                    .as_ref()
                    .ok_or_else(|| MetricsError::MissingProbs(a.probe_id.clone()))?;
                let mut target = vec![0.0; p.len()];
                target[item.correct_index] = 1.0;
                kl_divergence(&target, p, smoothing(cfg)).map_err(|e| MetricsError::InvalidRecord(e.to_string()))?
            }
        };
        n += 1;
        if d <= cfg.eta_plus {
            pass += 1;
        }
    }
    Ok((n > 0).then(|| pass as f64 / n as f64))
}

/// Share of preservation probes whose prediction drifted by at most `epsilon`.
fn epsilon_pass(cfg: &EvalConfig, input: &EvalInput, key: &[McqItem]) -> Result<Option<f64>, MetricsError> {
    let ids: std::collections::BTreeSet<String> = key
        .iter()
        .filter(|i| i.probe.polarity == Polarity::Preservation)
        .map(|i| i.probe.probe_id.clone())
        .collect();
    if ids.is_empty() {
        return Ok(None);
    }
    let pre = index_answers(&input.pre_answers, Phase::Pre)?;
    let post = index_answers(&input.post_answers, Phase::Post)?;
    let mut pass = 0;
    for id in &ids {
        let single = std::collections::BTreeSet::from([id.clone()]);
        let pre_one: Vec<AnswerRecord> = pre.get(id.as_str()).map(|a| (*a).clone()).into_iter().collect();
        let post_one: Vec<AnswerRecord> = post.get(id.as_str()).map(|a| (*a).clone()).into_iter().collect();
        if ccr(&pre_one, &post_one, &single, cfg.distance, cfg.kl_smoothing)? <= cfg.epsilon {
            pass += 1;
        }
    }
    Ok(Some(pass as f64 / ids.len() as f64))
}

/// Score one model's pre and post answers against the pre and post keys.
pub fn evaluate(input: &EvalInput, cfg: &EvalConfig) -> Result<MetricReport, MetricsError> {
    cfg.validate()?;
    if input.pre_key.is_empty() && input.post_key.is_empty() {
        return Err(MetricsError::EmptyFilter);
    }
    let keys: Vec<&[McqItem]> = [input.pre_key.as_slice(), input.post_key.as_slice()]
        .into_iter()
        .filter(|k| !k.is_empty())
        .collect();
    let any_key = keys[0];

    let mut accuracy = Vec::new();
    for (phase, answers) in [(Phase::Pre, &input.pre_answers), (Phase::Post, &input.post_answers)] {
        for key in &keys {
            accuracy.extend(cells(phase, answers, key)?);
        }
    }
    accuracy.sort_by(|a, b| a.key.cmp(&b.key));

    let related = related_probes(any_key, cfg.radius);
    let ccr_value = optional(ccr(
        &input.pre_answers,
        &input.post_answers,
        &related,
        cfg.distance,
        cfg.kl_smoothing,
    ))?;
    let rr_value = optional(rr(&input.pre_answers, &input.post_answers, &related))?;
    let rr_key = if input.pre_key.is_empty() {
        None
    } else {
        optional(rr_original_key(&input.post_answers, &input.pre_key, &related))?
    };

    let is = |t: ProbeType| move |i: &McqItem| i.probe.probe_type == t;
    let direct_accuracy = if input.post_key.is_empty() {
        None
    } else {
        rate(&input.post_answers, &input.post_key, is(ProbeType::Direct))?
    };
    let multihop_accuracy = if input.pre_key.is_empty() {
        None
    } else {
        rate(&input.post_answers, &input.pre_key, is(ProbeType::MultiHop))?
    };
    let spread = match multihop_accuracy {
        Some(m) => Some(spread_proxies(direct_accuracy.unwrap_or(0.0), m, cfg.mode)?),
        None => None,
    };

    let pairs = if input.pre_key.is_empty() || input.post_key.is_empty() {
        Vec::new()
    } else {
        conflict_pairs(&input.pre_key, &input.post_key)?
    };
    let conflict_post = optional(conflict_rate(&input.post_answers, &pairs))?;
    let conflict_pre = optional(conflict_rate(&input.pre_answers, &pairs))?;

    let eta = if input.post_key.is_empty() {
        None
    } else {
        eta_plus_pass(cfg, &input.post_answers, &input.post_key)?
    };
    let eps = epsilon_pass(cfg, input, any_key)?;

    let ood = |i: &McqItem| split_of(&i.probe) == Split::Ood;
    let id = |i: &McqItem| split_of(&i.probe) == Split::Id;
    let tradeoff_key = if input.post_key.is_empty() {
        any_key
    } else {
        &input.post_key
    };
    let ood_pre = rate(&input.pre_answers, tradeoff_key, ood)?;
    let ood_post = rate(&input.post_answers, tradeoff_key, ood)?;
    let tradeoff = match (ood_pre, ood_post) {
        (Some(a), Some(b)) => {
            let gain = rate(&input.post_answers, tradeoff_key, id)?.unwrap_or(0.0)
                - rate(&input.pre_answers, tradeoff_key, id)?.unwrap_or(0.0);
            Some(tradeoff_report(gain, a, b)?)
        }
        _ => None,
    };

    let failure_inputs = FailureInputs {
        rr: match cfg.rr_reference {
            RrReference::PrePrediction => rr_value,
            RrReference::OriginalKey => rr_key,
        },
        ccr: ccr_value,
        conflict_rate: conflict_post,
        ood: ood_post,
        ood_baseline: ood_pre,
        instruction_following: cfg.external.instruction_following.map(|s| s.post),
        instruction_following_baseline: cfg.external.instruction_following.map(|s| s.pre),
        truthfulness: cfg.external.truthfulness.map(|s| s.post),
        truthfulness_baseline: cfg.external.truthfulness.map(|s| s.pre),
    };
    let failure_modes = classify_failures(cfg.mode, &failure_inputs, &cfg.thresholds)?;

    let model_id = input
        .post_answers
        .first()
        .or(input.pre_answers.first())
        .map(|a| a.model_id.clone());
    let n_probes = any_key
        .iter()
        .map(|i| i.probe.probe_id.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len();

    Ok(MetricReport {
        model_id,
        mode: cfg.mode,
        distance: cfg.distance,
        radius: cfg.radius,
        n_probes,
        accuracy,
        related_probes: related.len(),
        ccr: ccr_value,
        rr: rr_value,
        rr_original_key: rr_key,
        direct_accuracy,
        multihop_accuracy,
        over_spread: spread.and_then(|s| s.over_spread),
        under_spread: spread.and_then(|s| s.under_spread),
        conflict_pairs: pairs.len(),
        conflict_rate: conflict_post,
        conflict_rate_pre: conflict_pre,
        eta_plus_pass_rate: eta,
        epsilon_pass_rate: eps,
        tradeoff,
        collapse_scale: None,
        failure_modes,
    })
}

impl MetricReport {
    /// Flat rows: `metric, answer_phase, keyed_phase, probe_type, branch,
    /// domain, split, value`. Scalar metrics leave the slice columns empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "metric",
            "answer_phase",
            "keyed_phase",
            "probe_type",
            "branch",
            "domain",
            "split",
            "value",
        ])
        .expect("in-memory write");
        for c in &self.accuracy {
            w.write_record([
                "accuracy",
                c.key.answer_phase.as_str(),
                c.key.keyed_phase.as_str(),
                c.key.probe_type.as_str(),
                c.key.branch.as_str(),
                &c.key.domain,
                c.key.split.as_str(),
                &c.accuracy.to_string(),
            ])
            .expect("in-memory write");
        }
        let scalars = [
            ("ccr", self.ccr),
            ("rr", self.rr),
            ("rr_original_key", self.rr_original_key),
            ("direct_accuracy", self.direct_accuracy),
            ("multihop_accuracy", self.multihop_accuracy),
            ("over_spread", self.over_spread),
            ("under_spread", self.under_spread),
            ("conflict_rate", self.conflict_rate),
            ("conflict_rate_pre", self.conflict_rate_pre),
            ("eta_plus_pass_rate", self.eta_plus_pass_rate),
            ("epsilon_pass_rate", self.epsilon_pass_rate),
            ("id_gain", self.tradeoff.map(|t| t.id_gain)),
            ("ood_drift", self.tradeoff.map(|t| t.ood_drift)),
            ("collapse_scale", self.collapse_scale.map(|s| f64::from(s.get()))),
        ];
        for (name, value) in scalars {
            if let Some(v) = value {
                w.write_record([name, "", "", "", "", "", "", &v.to_string()])
                    .expect("in-memory write");
            }
        }
        for f in &self.failure_modes {
            let name = format!(
                "failure:{}",
                serde_json::to_value(f.kind)
                    .expect("serializable")
                    .as_str()
                    .unwrap_or_default()
            );
            w.write_record([name.as_str(), "", "", "", "", "", "", &f.severity.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }
}

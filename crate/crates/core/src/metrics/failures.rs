use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::kg::InterventionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    UnderForgetting,
    OverSpreading,
    ConflictEmergence,
    KnowledgeDrift,
    InstructionFollowingDrop,
    HallucinationIncrease,
}

impl FailureKind {
    pub const ALL: [FailureKind; 6] = [
        FailureKind::UnderForgetting,
        FailureKind::OverSpreading,
        FailureKind::ConflictEmergence,
        FailureKind::KnowledgeDrift,
        FailureKind::InstructionFollowingDrop,
        FailureKind::HallucinationIncrease,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureMode {
    pub kind: FailureKind,
    pub severity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureThresholds {
    pub rr: f64,
    pub ccr: f64,
    pub conflict: f64,
    pub ood_drop: f64,
    pub instruction_following_drop: f64,
    pub hallucination: f64,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            rr: 0.5,
            ccr: 0.3,
            conflict: 0.2,
            ood_drop: 0.05,
            instruction_following_drop: 0.10,
            hallucination: 0.05,
        }
    }
}

impl FailureThresholds {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = [
            self.rr,
            self.ccr,
            self.conflict,
            self.ood_drop,
            self.instruction_following_drop,
            self.hallucination,
        ];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(MetricsError::Config("failure thresholds must be positive".into()))
        }
    }
}

/// Post-intervention metrics with the matching pre-intervention baselines.
/// Absent metrics are skipped; a present post score without its baseline is an
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureInputs {
    pub rr: Option<f64>,
    pub ccr: Option<f64>,
    pub conflict_rate: Option<f64>,
    pub ood: Option<f64>,
    pub ood_baseline: Option<f64>,
    pub instruction_following: Option<f64>,
    pub instruction_following_baseline: Option<f64>,
    /// Accuracy on a truthfulness split; a drop means more hallucination.
    pub truthfulness: Option<f64>,
    pub truthfulness_baseline: Option<f64>,
}

fn severity(value: f64, threshold: f64) -> f64 {
    ((value - threshold) / threshold).clamp(0.0, 1.0)
}

fn drop(post: Option<f64>, baseline: Option<f64>, name: &'static str) -> Result<Option<f64>, MetricsError> {
    match (post, baseline) {
        (None, _) => Ok(None),
        (Some(_), None) => Err(MetricsError::MissingBaseline(name)),
        (Some(p), Some(b)) => Ok(Some(b - p)),
    }
}

/// Fixed rule map from metrics to failure modes; severity is the excess over
/// the threshold relative to the threshold, clipped to `[0, 1]`.
pub fn classify_failures(
    mode: InterventionMode,
    inputs: &FailureInputs,
    thresholds: &FailureThresholds,
) -> Result<Vec<FailureMode>, MetricsError> {
    thresholds.validate()?;
    let checks = [
        (
            FailureKind::UnderForgetting,
            if mode == InterventionMode::Unlearn {
                inputs.rr
            } else {
                None
            },
            thresholds.rr,
        ),
        (FailureKind::OverSpreading, inputs.ccr, thresholds.ccr),
        (
            FailureKind::ConflictEmergence,
            inputs.conflict_rate,
            thresholds.conflict,
        ),
        (
            FailureKind::KnowledgeDrift,
            drop(inputs.ood, inputs.ood_baseline, "OOD accuracy")?,
            thresholds.ood_drop,
        ),
        (
            FailureKind::InstructionFollowingDrop,
            drop(
                inputs.instruction_following,
                inputs.instruction_following_baseline,
                "instruction-following score",
            )?,
            thresholds.instruction_following_drop,
        ),
        (
            FailureKind::HallucinationIncrease,
            drop(
                inputs.truthfulness,
                inputs.truthfulness_baseline,
                "truthfulness accuracy",
            )?,
            thresholds.hallucination,
        ),
    ];
    Ok(checks
        .into_iter()
        .filter_map(|(kind, value, t)| {
            value.filter(|v| *v >= t).map(|v| FailureMode {
                kind,
                severity: severity(v, t),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn under_forgetting_severity() {
        let inputs = FailureInputs {
            rr: Some(0.9),
            ..Default::default()
        };
        let out = classify_failures(InterventionMode::Unlearn, &inputs, &FailureThresholds::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, FailureKind::UnderForgetting);
        assert!((out[0].severity - 0.8).abs() < 1e-12);
        // Editing never reports under-forgetting.
        assert!(
            classify_failures(InterventionMode::Edit, &inputs, &FailureThresholds::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn ccr_clipped() {
        let inputs = FailureInputs {
            ccr: Some(1.0),
            ..Default::default()
        };
        let out = classify_failures(InterventionMode::Edit, &inputs, &FailureThresholds::default()).unwrap();
        assert_eq!(
            out,
            [FailureMode {
                kind: FailureKind::OverSpreading,
                severity: 1.0
            }]
        );
    }

    #[test]
    fn baseline_values_yield_nothing() {
        let inputs = FailureInputs {
            rr: Some(0.0),
            ccr: Some(0.0),
            conflict_rate: Some(0.0),
            ood: Some(0.6),
            ood_baseline: Some(0.6),
            instruction_following: Some(0.8),
            instruction_following_baseline: Some(0.8),
            truthfulness: Some(0.7),
            truthfulness_baseline: Some(0.7),
        };
        assert!(
            classify_failures(InterventionMode::Unlearn, &inputs, &FailureThresholds::default())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn missing_baseline() {
        let inputs = FailureInputs {
            ood: Some(0.5),
            ..Default::default()
        };
        assert!(matches!(
            classify_failures(InterventionMode::Edit, &inputs, &FailureThresholds::default()),
            Err(MetricsError::MissingBaseline(_))
        ));
    }
}

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{check_unit, EvalConfig, MetricsError};
use crate::kg::{InterventionMode, NodeLevel};
use crate::probegen::ScaleTag;

/// Slack on the collapse drop test, so a drop of exactly `collapse_delta`
/// triggers despite rounding.
const DROP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CurveKey {
    pub domain: String,
    pub branch: NodeLevel,
    pub mode: InterventionMode,
}

impl fmt::Display for CurveKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.domain, self.branch, self.mode)
    }
}

/// Accuracy by data scale for one (domain, branch, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticityCurve {
    #[serde(flatten)]
    pub key: CurveKey,
    pub scale_points: Vec<(ScaleTag, f64)>,
    /// Highest accuracy over all scales.
    pub ceiling: f64,
}

impl PlasticityCurve {
    pub fn new(key: CurveKey, mut points: Vec<(ScaleTag, f64)>) -> Result<Self, MetricsError> {
        points.sort_by_key(|p| p.0);
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(MetricsError::CurveMismatch);
        }
        if points.len() < 2 {
            return Err(MetricsError::SparseCurve(key.to_string()));
        }
        for &(_, acc) in &points {
            check_unit("accuracy", acc)?;
        }
        let ceiling = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            key,
            scale_points: points,
            ceiling,
        })
    }

    pub fn scales(&self) -> Vec<ScaleTag> {
        self.scale_points.iter().map(|p| p.0).collect()
    }
}

/// One curve per (domain, branch, mode), sorted by key, points by scale.
pub fn plasticity_curves(
    table: &BTreeMap<(ScaleTag, NodeLevel, String, InterventionMode), f64>,
) -> Result<Vec<PlasticityCurve>, MetricsError> {
    let mut grouped: BTreeMap<CurveKey, Vec<(ScaleTag, f64)>> = BTreeMap::new();
    for ((scale, branch, domain, mode), &acc) in table {
        grouped
            .entry(CurveKey {
                domain: domain.clone(),
                branch: *branch,
                mode: *mode,
            })
            .or_default()
            .push((*scale, acc));
    }
    grouped
        .into_iter()
        .map(|(k, pts)| PlasticityCurve::new(k, pts))
        .collect()
}

/// The first scale after the first at which direct accuracy has fallen at least
/// `collapse_delta` below its running maximum while reverse accuracy is at
/// least `reverse_floor`. `None` when that never happens.
pub fn collapse_point(
    direct: &PlasticityCurve,
    reverse: &PlasticityCurve,
    cfg: &EvalConfig,
) -> Result<Option<ScaleTag>, MetricsError> {
    if direct.scales() != reverse.scales() {
        return Err(MetricsError::CurveMismatch);
    }
    let mut running_max = f64::NEG_INFINITY;
    for (i, (&(scale, d), &(_, r))) in direct.scale_points.iter().zip(&reverse.scale_points).enumerate() {
        if i > 0 && running_max - d >= cfg.collapse_delta - DROP_SLACK && r >= cfg.reverse_floor {
            return Ok(Some(scale));
        }
        running_max = running_max.max(d);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> PlasticityCurve {
        let key = CurveKey {
            domain: "physics".into(),
            branch: NodeLevel::Root,
            mode: InterventionMode::Edit,
        };
        let pts = ScaleTag::ALL
            .iter()
            .zip(values)
            .map(|(&k, &v)| (ScaleTag::try_from(u64::from(k)).unwrap(), v))
            .collect();
        PlasticityCurve::new(key, pts).unwrap()
    }

    fn cfg(delta: f64, floor: f64) -> EvalConfig {
        EvalConfig {
            collapse_delta: delta,
            reverse_floor: floor,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn synthetic_collapse_at_thousand() {
        let d = curve(&[0.2, 0.5, 0.5, 0.3, 0.3]);
        let r = curve(&[0.9; 5]);
        let got = collapse_point(&d, &r, &cfg(0.1, 0.8)).unwrap();
        assert_eq!(got.map(ScaleTag::get), Some(1000));
    }

    #[test]
    fn monotone_never_collapses() {
        let d = curve(&[0.1, 0.2, 0.3, 0.3, 0.9]);
        assert_eq!(collapse_point(&d, &curve(&[0.9; 5]), &cfg(0.1, 0.8)).unwrap(), None);
    }

    #[test]
    fn low_reverse_blocks_collapse() {
        let d = curve(&[0.2, 0.5, 0.5, 0.3, 0.3]);
        assert_eq!(collapse_point(&d, &curve(&[0.4; 5]), &cfg(0.1, 0.8)).unwrap(), None);
    }

    #[test]
    fn ceiling_and_sparse() {
        assert_eq!(curve(&[0.2, 0.45, 0.45]).ceiling, 0.45);
        let key = CurveKey {
            domain: "x".into(),
            branch: NodeLevel::Leaf,
            mode: InterventionMode::Unlearn,
        };
        assert!(matches!(
            PlasticityCurve::new(key, vec![(ScaleTag::try_from(1).unwrap(), 0.5)]),
            Err(MetricsError::SparseCurve(_))
        ));
    }

    #[test]
    fn mismatched_scales() {
        let d = curve(&[0.2, 0.5, 0.5]);
        let r = curve(&[0.9; 4]);
        assert!(matches!(
            collapse_point(&d, &r, &cfg(0.1, 0.8)),
            Err(MetricsError::CurveMismatch)
        ));
    }

    #[test]
    fn table_to_curves() {
        let mut table = BTreeMap::new();
        for branch in NodeLevel::ALL {
            for (k, acc) in [(10u64, 0.4), (1, 0.2)] {
                table.insert(
                    (
                        ScaleTag::try_from(k).unwrap(),
                        branch,
                        "physics".to_string(),
                        InterventionMode::Edit,
                    ),
                    acc,
                );
            }
        }
        let curves = plasticity_curves(&table).unwrap();
        assert_eq!(curves.len(), 3);
        assert!(curves
            .iter()
            .all(|c| c.scale_points[0].0.get() == 1 && c.ceiling == 0.4));
    }
}

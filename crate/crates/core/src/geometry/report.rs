use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svd::{svd_diff, SvdReport, DEFAULT_MAX_RANK};
use super::{fisher_distance, l2_distance, linear_cka, log_minmax, GeometryError, MatrixPair, DEFAULT_LOG_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub svd: SvdReport,
    pub l2: f64,
    pub fisher: Option<f64>,
    /// Linear CKA of `W` against `W′`, rows as samples. `None` when a side has
    /// zero variance.
    pub cka: Option<f64>,
}

/// Per-layer values of one metric, with the log-min-max normalised copy when
/// the series allows it (at least two values, not constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub raw: Vec<f64>,
    pub normalized: Option<Vec<f64>>,
}

impl MetricSeries {
    fn new(raw: Vec<f64>) -> Self {
        let normalized = log_minmax(&raw, DEFAULT_LOG_EPS).ok();
        Self { raw, normalized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub labels: Vec<String>,
    pub metrics: BTreeMap<String, MetricSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub layers: Vec<LayerReport>,
    pub similarity: SimilarityReport,
}

fn layer(
    pair: &MatrixPair,
    fisher: Option<&BTreeMap<String, DMatrix<f64>>>,
    rank: Option<usize>,
    tol: f64,
) -> Result<LayerReport, GeometryError> {
    let (rows, cols) = pair.w.shape();
    let rank = rank.unwrap_or(DEFAULT_MAX_RANK).min(rows.min(cols));
    let svd = svd_diff(pair, rank, tol)?;
    let fisher = match fisher {
        Some(map) => {
            let f = map
                .get(&pair.name)
                .ok_or_else(|| GeometryError::MissingPhase(format!("fisher/{}", pair.name)))?;
            Some(fisher_distance(pair, f)?)
        }
        None => None,
    };
    let cka = match linear_cka(&pair.w, &pair.w_prime) {
        Ok(v) => Some(v),
        Err(GeometryError::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(LayerReport {
        name: pair.name.clone(),
        rows,
        cols,
        svd,
        l2: l2_distance(pair)?,
        fisher,
        cka,
    })
}

/// Per-layer SVD, distance and CKA comparison of pre and post weights.
/// `rank` defaults to 32, capped by each layer's shape.
pub fn analyze(
    pairs: &[MatrixPair],
    fisher: Option<&BTreeMap<String, DMatrix<f64>>>,
    rank: Option<usize>,
    tol: f64,
) -> Result<GeometryReport, GeometryError> {
    if pairs.is_empty() {
        return Err(GeometryError::InvalidArgument("no tensor pairs".into()));
    }
    let layers: Vec<LayerReport> = pairs
        .par_iter()
        .map(|p| layer(p, fisher, rank, tol))
        .collect::<Result<_, _>>()?;

    let mut metrics = BTreeMap::new();
    metrics.insert(
        "l2".to_string(),
        MetricSeries::new(layers.iter().map(|l| l.l2).collect()),
    );
    if layers.iter().all(|l| l.fisher.is_some()) && fisher.is_some() {
        metrics.insert(
            "fisher".to_string(),
            MetricSeries::new(layers.iter().filter_map(|l| l.fisher).collect()),
        );
    }
    if layers.iter().all(|l| l.cka.is_some()) {
        metrics.insert(
            "cka_distance".to_string(),
            MetricSeries::new(layers.iter().filter_map(|l| l.cka).map(|c| 1.0 - c).collect()),
        );
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let scaling: Vec<f64> = layers.iter().map(|l| mean(&l.svd.scaling_ratios)).collect();
    if scaling.iter().all(|v| v.is_finite()) {
        metrics.insert("mean_scaling_ratio".to_string(), MetricSeries::new(scaling));
    }
    metrics.insert(
        "rotation".to_string(),
        MetricSeries::new(
            layers
                .iter()
                .map(|l| 1.0 - 0.5 * (l.svd.left_alignment + l.svd.right_alignment))
                .map(|v| v.max(0.0))
                .collect(),
        ),
    );

    Ok(GeometryReport {
        similarity: SimilarityReport {
            labels: layers.iter().map(|l| l.name.clone()).collect(),
            metrics,
        },
        layers,
    })
}

impl GeometryReport {
    /// One row per layer and metric: `layer,metric,raw,normalized`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "metric", "raw", "normalized"])
            .expect("in-memory write");
        for (metric, series) in &self.similarity.metrics {
            for (i, label) in self.similarity.labels.iter().enumerate() {
                let norm = series.normalized.as_ref().map(|n| n[i].to_string()).unwrap_or_default();
                w.write_record([label.as_str(), metric, &series.raw[i].to_string(), &norm])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(seed: f64) -> DMatrix<f64> {
        DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) as f64 + seed).sin())
    }

    #[test]
    fn scaled_layers() {
        let pairs = vec![
            MatrixPair::new("a", w(0.0), w(0.0) * 2.0).unwrap(),
            MatrixPair::new("b", w(1.0), w(1.0) * 1.1).unwrap(),
        ];
        let r = analyze(&pairs, None, None, 1e-6).unwrap();
        assert_eq!(r.layers[0].svd.rank, 4);
        assert!((r.layers[0].cka.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.similarity.metrics["l2"].raw[0] > r.similarity.metrics["l2"].raw[1]);
        assert_eq!(r.similarity.metrics["l2"].normalized.as_ref().unwrap(), &vec![1.0, 0.0]);
        assert!(!r.similarity.metrics.contains_key("fisher"));
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,metric,raw,normalized\n"));
        assert!(csv.contains("a,l2,"));
    }

    #[test]
    fn fisher_must_cover_layers() {
        let pairs = vec![MatrixPair::new("a", w(0.0), w(0.5)).unwrap()];
        let mut f = BTreeMap::new();
        assert!(matches!(
            analyze(&pairs, Some(&f), None, 1e-6),
            Err(GeometryError::MissingPhase(_))
        ));
        f.insert("a".to_string(), DMatrix::from_element(5, 4, 1.0));
        let r = analyze(&pairs, Some(&f), Some(2), 1e-6).unwrap();
        assert_eq!(r.layers[0].fisher, Some(r.layers[0].l2));
        assert_eq!(r.layers[0].svd.rank, 2);
        assert!(r.similarity.metrics["fisher"].normalized.is_none());
    }
}

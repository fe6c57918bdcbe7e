//! Weight-space and output-space comparisons between pre and post states.

mod manifest;
mod report;
mod svd;

pub use manifest::{load_manifest, load_pairs, load_phase, write_phase, ManifestEntry, TensorManifest, MANIFEST_FILE};
pub use report::{analyze, GeometryReport, LayerReport, MetricSeries, SimilarityReport};
pub use svd::{svd_diff, SvdReport, DEFAULT_MAX_RANK, DEFAULT_TOL};

use std::path::PathBuf;

use nalgebra::DMatrix;

pub const DEFAULT_LOG_EPS: f64 = 1e-8;
const DISTRIBUTION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor `{0}` is missing from one phase")]
    MissingPhase(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("fisher weights must be non-negative")]
    NegativeWeight,
    #[error("series is constant")]
    ConstantSeries,
    #[error("series needs at least two values")]
    ShortSeries,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A parameter matrix before (`w`) and after (`w_prime`) an intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPair {
    pub name: String,
    pub w: DMatrix<f64>,
    pub w_prime: DMatrix<f64>,
}

impl MatrixPair {
    pub fn new(name: impl Into<String>, w: DMatrix<f64>, w_prime: DMatrix<f64>) -> Result<Self, GeometryError> {
        let name = name.into();
        if w.shape() != w_prime.shape() {
            return Err(GeometryError::ShapeMismatch(format!(
                "`{name}`: {:?} vs {:?}",
                w.shape(),
                w_prime.shape()
            )));
        }
        Ok(Self { name, w, w_prime })
    }
}

fn weighted_sq_diff(pair: &MatrixPair, weights: Option<&DMatrix<f64>>) -> f64 {
    let mut total = 0.0;
    for (i, (a, b)) in pair.w.iter().zip(pair.w_prime.iter()).enumerate() {
        let d = b - a;
        let w = weights.map_or(1.0, |f| f[i]);
        total += w * d * d;
    }
    total
}

/// Frobenius norm of `W′ − W`.
pub fn l2_distance(pair: &MatrixPair) -> Result<f64, GeometryError> {
    if pair.w.shape() != pair.w_prime.shape() {
        return Err(GeometryError::ShapeMismatch(pair.name.clone()));
    }
    Ok(weighted_sq_diff(pair, None).sqrt())
}

/// `sqrt(Σ F_ij (W′_ij − W_ij)²)` with a diagonal Fisher estimate `F`.
pub fn fisher_distance(pair: &MatrixPair, fisher: &DMatrix<f64>) -> Result<f64, GeometryError> {
    if pair.w.shape() != pair.w_prime.shape() || fisher.shape() != pair.w.shape() {
        return Err(GeometryError::ShapeMismatch(format!(
            "`{}`: weights {:?}, fisher {:?}",
            pair.name,
            pair.w.shape(),
            fisher.shape()
        )));
    }
    if fisher.iter().any(|f| !(*f >= 0.0)) {
        return Err(GeometryError::NegativeWeight);
    }
    Ok(weighted_sq_diff(pair, Some(fisher)).sqrt())
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Linear CKA between representations sharing their rows:
/// `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centred inputs.
pub fn linear_cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64, GeometryError> {
    if x.nrows() != y.nrows() {
        return Err(GeometryError::ShapeMismatch(format!(
            "{} vs {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(GeometryError::DegenerateInput("at least two rows are needed".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument("non-finite entry".into()));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let cross = (yc.transpose() * &xc).norm_squared();
    let xx = (xc.transpose() * &xc).norm();
    let yy = (yc.transpose() * &yc).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(GeometryError::DegenerateInput(
            "a representation has zero variance".into(),
        ));
    }
    Ok((cross / (xx * yy)).clamp(0.0, 1.0))
}

fn check_distribution(p: &[f64]) -> Result<(), GeometryError> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(GeometryError::InvalidDistribution(format!("{p:?}")));
    }
    Ok(())
}

fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let raised: Vec<f64> = p.iter().map(|&v| if v == 0.0 { eps } else { v }).collect();
    let total: f64 = raised.iter().sum();
    raised.into_iter().map(|v| v / total).collect()
}

/// `KL(p ‖ q)` in nats with `0·ln 0 = 0`. With `smoothing`, zero entries of both
/// distributions are raised to that value and renormalised first; without it,
/// a zero in `q` where `p` is positive gives infinity.
pub fn kl_divergence(p: &[f64], q: &[f64], smoothing: Option<f64>) -> Result<f64, GeometryError> {
    if p.len() != q.len() {
        return Err(GeometryError::LengthMismatch(p.len(), q.len()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let (p, q) = match smoothing {
        Some(eps) if eps > 0.0 => (smooth(p, eps), smooth(q, eps)),
        Some(eps) => {
            return Err(GeometryError::InvalidArgument(format!(
                "smoothing {eps} must be positive"
            )))
        }
        None => (p.to_vec(), q.to_vec()),
    };
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave tiny negatives for identical inputs.
    Ok(total.max(0.0))
}

/// Mean of `KL(p_i ‖ q_i)` over aligned lists.
pub fn kl_mean(p_list: &[Vec<f64>], q_list: &[Vec<f64>], smoothing: Option<f64>) -> Result<f64, GeometryError> {
    if p_list.len() != q_list.len() {
        return Err(GeometryError::LengthMismatch(p_list.len(), q_list.len()));
    }
    if p_list.is_empty() {
        return Err(GeometryError::InvalidArgument("empty lists".into()));
    }
    let mut total = 0.0;
    for (p, q) in p_list.iter().zip(q_list) {
        total += kl_divergence(p, q, smoothing)?;
    }
    Ok(total / p_list.len() as f64)
}

/// Add `eps`, take log10, and rescale so the series spans `[0, 1]`.
pub fn log_minmax(series: &[f64], eps: f64) -> Result<Vec<f64>, GeometryError> {
    if !(eps > 0.0) {
        return Err(GeometryError::InvalidArgument("eps must be positive".into()));
    }
    if series.len() < 2 {
        return Err(GeometryError::ShortSeries);
    }
    if series.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(GeometryError::InvalidArgument(
            "series values must be finite and non-negative".into(),
        ));
    }
    let logs: Vec<f64> = series.iter().map(|x| (x + eps).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(GeometryError::ConstantSeries);
    }
    Ok(logs.into_iter().map(|l| (l - lo) / (hi - lo)).collect())
}

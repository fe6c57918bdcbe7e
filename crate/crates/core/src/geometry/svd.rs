use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GeometryError, MatrixPair};

pub const DEFAULT_MAX_RANK: usize = 32;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdReport {
    pub name: String,
    pub rank: usize,
    /// `σ′_i / σ_i` for the top `rank` singular values, degenerate ones excluded.
    pub scaling_ratios: Vec<f64>,
    /// Indices (0-based) whose `σ_i < tol · σ_1`.
    pub degenerate: Vec<usize>,
    pub left_alignment: f64,
    pub right_alignment: f64,
    pub recon_residual: f64,
}

struct Decomposition {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
}

/// Thin SVD with singular values in descending order.
fn decompose(m: &DMatrix<f64>, name: &str) -> Result<Decomposition, GeometryError> {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| GeometryError::NumericFailure(format!("SVD of `{name}` did not converge")))?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(GeometryError::NumericFailure(format!(
                "SVD of `{name}` returned no vectors"
            )))
        }
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
    Ok(Decomposition {
        u,
        sigma: order.iter().map(|&i| s[i]).collect(),
        v_t,
    })
}

/// Mean squared cosine of the principal angles between the column spans of
/// two orthonormal bases.
fn alignment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let cosines = m.singular_values();
    let mean = cosines.iter().map(|c| c.min(1.0).powi(2)).sum::<f64>() / cosines.len() as f64;
    mean.clamp(0.0, 1.0)
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    (a - b).norm() / denom
}

/// Decompose the change from `W` to `W′` into singular-value scaling and
/// rotation of the top-`rank` singular subspaces.
pub fn svd_diff(pair: &MatrixPair, rank: usize, tol: f64) -> Result<SvdReport, GeometryError> {
    let (m, n) = pair.w.shape();
    if pair.w_prime.shape() != (m, n) {
        return Err(GeometryError::ShapeMismatch(pair.name.clone()));
    }
    if rank == 0 || rank > m.min(n) {
        return Err(GeometryError::InvalidArgument(format!(
            "rank {rank} outside 1..={} for `{}`",
            m.min(n),
            pair.name
        )));
    }
    if !(tol > 0.0) {
        return Err(GeometryError::InvalidArgument("tol must be positive".into()));
    }
    if pair.w.iter().chain(pair.w_prime.iter()).any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!(
            "`{}` has non-finite entries",
            pair.name
        )));
    }
    if pair.w.norm() == 0.0 || pair.w_prime.norm() == 0.0 {
        return Err(GeometryError::DegenerateInput(format!(
            "`{}` is a zero matrix",
            pair.name
        )));
    }

    let pre = decompose(&pair.w, &pair.name)?;
    let post = decompose(&pair.w_prime, &pair.name)?;

    let recomposed = &post.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(post.sigma.clone())) * &post.v_t;
    let recon_residual = relative_frobenius(&recomposed, &pair.w_prime);
    if !(recon_residual <= tol) {
        return Err(GeometryError::NumericFailure(format!(
            "`{}` recomposition residual {recon_residual:e} exceeds {tol:e}",
            pair.name
        )));
    }

    let floor = tol * pre.sigma[0];
    let mut scaling_ratios = Vec::with_capacity(rank);
    let mut degenerate = Vec::new();
    for i in 0..rank {
        if pre.sigma[i] < floor {
            degenerate.push(i);
        } else {
            scaling_ratios.push(post.sigma[i] / pre.sigma[i]);
        }
    }

    let left = alignment(
        &pre.u.columns(0, rank).into_owned(),
        &post.u.columns(0, rank).into_owned(),
    );
    let right = alignment(&pre.v_t.rows(0, rank).transpose(), &post.v_t.rows(0, rank).transpose());
    Ok(SvdReport {
        name: pair.name.clone(),
        rank,
        scaling_ratios,
        degenerate,
        left_alignment: left,
        right_alignment: right,
        recon_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0, 0.1, 0.3, 0.7])
    }

    #[test]
    fn pure_scaling() {
        let pair = MatrixPair::new("a", w(), w() * 2.0).unwrap();
        let r = svd_diff(&pair, 3, DEFAULT_TOL).unwrap();
        assert!(r.scaling_ratios.iter().all(|x| (x - 2.0).abs() < 1e-12));
        assert!(r.left_alignment > 1.0 - 1e-12 && r.right_alignment > 1.0 - 1e-12);
    }

    #[test]
    fn identity_change() {
        let pair = MatrixPair::new("a", w(), w()).unwrap();
        let r = svd_diff(&pair, 3, DEFAULT_TOL).unwrap();
        assert!(r.scaling_ratios.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(r.recon_residual < 1e-12);
    }

    #[test]
    fn rotation_lowers_alignment() {
        let rot = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let pair = MatrixPair::new("a", w(), w() * rot).unwrap();
        let r = svd_diff(&pair, 1, DEFAULT_TOL).unwrap();
        assert!((r.scaling_ratios[0] - 1.0).abs() < 1e-12);
        assert!(r.right_alignment < 0.99);
        assert!(r.left_alignment > 1.0 - 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let zero = MatrixPair::new("z", DMatrix::zeros(3, 3), DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(
            svd_diff(&zero, 1, DEFAULT_TOL),
            Err(GeometryError::DegenerateInput(_))
        ));
        let pair = MatrixPair::new("a", w(), w()).unwrap();
        assert!(svd_diff(&pair, 4, DEFAULT_TOL).is_err());
        assert!(svd_diff(&pair, 0, DEFAULT_TOL).is_err());
    }

    #[test]
    fn rank_deficient_marks_degenerate() {
        let mut m = w();
        m.set_column(2, &(m.column(0) * 2.0));
        let pair = MatrixPair::new("a", m.clone(), m * 3.0).unwrap();
        let r = svd_diff(&pair, 3, DEFAULT_TOL).unwrap();
        assert_eq!(r.degenerate, [2]);
        assert_eq!(r.scaling_ratios.len(), 2);
    }
}

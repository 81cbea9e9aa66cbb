//! Segmentation overlap, counterfactual validity and Fréchet distance.

mod evaluate;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use evaluate::{evaluate_method, Evaluation, MapRecord, Method, MetricsReport, EvalSettings, PerImage};

use crate::grid::Mask;
use crate::{Error, Result};

pub const CV_TAU: f64 = 0.8;
/// Most negative eigenvalue tolerated (and clipped) by [`psd_matrix_sqrt`].
pub const PSD_TOLERANCE: f64 = 1e-6;

/// `|A ∩ B| / |A ∪ B|`; two empty masks agree perfectly.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_same(b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of pairs with `|p_x − p_cf| > tau`.
pub fn cv_score(pairs: &[(f64, f64)], tau: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("cv_score: no probability pairs".into()));
    }
    let flipped = pairs.iter().filter(|(px, pcf)| (px - pcf).abs() > tau).count();
    Ok(flipped as f64 / pairs.len() as f64)
}

/// Symmetric square root of a positive semidefinite matrix via eigendecomposition.
pub fn psd_matrix_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("psd_matrix_sqrt: {}×{} is not square", m.nrows(), m.ncols())));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -PSD_TOLERANCE {
            return Err(Error::Numerical(format!("matrix is not positive semidefinite (eigenvalue {min:.3e})")));
        }
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

fn moments(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if features.len() < 2 {
        return Err(Error::Data(format!("fid: need at least 2 feature vectors, got {}", features.len())));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("fid: feature vectors differ in length".into()));
    }
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

/// Fréchet distance between Gaussian fits (sample mean, unbiased covariance) of two feature sets.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = moments(real)?;
    let (mu2, s2) = moments(generated)?;
    if mu1.len() != mu2.len() {
        return Err(Error::Shape(format!("fid: dimension {} vs {}", mu1.len(), mu2.len())));
    }
    let root1 = psd_matrix_sqrt(&s1)?;
    let cross = psd_matrix_sqrt(&(&root1 * &s2 * &root1))?;
    let value = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

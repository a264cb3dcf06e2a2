use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::CameraDataset;
use crate::error::{CcmError, Result};

const DEGENERATE_NORM: f64 = 1e-12;

/// Element-wise mean of the per-frame features of one tracklet.
pub fn mean_pool_tracklet(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(CcmError::EmptyTracklet)?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for frame in frames {
        if frame.len() != d {
            return Err(CcmError::DimensionMismatch {
                expected: d,
                found: frame.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(frame) {
            *a += x;
        }
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > DEGENERATE_NORM) {
        return Err(CcmError::DegenerateFeature { norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// A fitted principal component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One component per row, ordered by descending eigenvalue.
    pub components: DMatrix<f64>,
    /// Covariance eigenvalues for the retained components.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Fits on the rows of `data` (N samples by d features).
    pub fn fit(data: &DMatrix<f64>, target_dim: usize) -> Result<Self> {
        let (n, d) = data.shape();
        if target_dim == 0 || target_dim > n.min(d) {
            return Err(CcmError::InvalidArgument(format!(
                "PCA target dimension {target_dim} outside 1..={}",
                n.min(d)
            )));
        }
        let mean = data.row_mean().transpose();
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let denom = (n.max(2) - 1) as f64;
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
            .ok_or_else(|| CcmError::Eigen("covariance eigendecomposition did not converge".into()))?;

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut components = DMatrix::zeros(target_dim, d);
        let mut eigenvalues = Vec::with_capacity(target_dim);
        for (row, &k) in order.iter().take(target_dim).enumerate() {
            components.set_row(row, &eig.eigenvectors.column(k).transpose());
            eigenvalues.push(eig.eigenvalues[k]);
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn transform(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(CcmError::DimensionMismatch {
                expected: self.mean.len(),
                found: data.ncols(),
            });
        }
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    pub fn transform_one(&self, v: &[f64]) -> Result<Vec<f64>> {
        let row = DMatrix::from_row_slice(1, v.len(), v);
        Ok(self.transform(&row)?.iter().copied().collect())
    }

    /// Maps projected coordinates back into the input space.
    pub fn inverse_transform(&self, projected: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = projected * &self.components;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Projects the rows of `features` onto their top `target_dim` principal
/// components.
pub fn pca_reduce(features: &DMatrix<f64>, target_dim: usize) -> Result<(DMatrix<f64>, Pca)> {
    let pca = Pca::fit(features, target_dim)?;
    let reduced = pca.transform(features)?;
    Ok((reduced, pca))
}

/// Applies optional global PCA followed by ℓ2 normalization to every
/// tracklet. Tracklets are expected to be mean-pooled already.
pub fn preprocess_dataset(dataset: &CameraDataset, pca_dim: Option<usize>) -> Result<CameraDataset> {
    let reduced = match pca_dim {
        Some(k) => {
            let rows: Vec<&[f64]> = dataset.iter().map(|t| t.feature.as_slice()).collect();
            let d = dataset.dimension();
            let data = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
            let pca = Pca::fit(&data, k)?;
            dataset.map_features(|v| pca.transform_one(v))?
        }
        None => dataset.clone(),
    };
    reduced.map_features(l2_normalize)
}

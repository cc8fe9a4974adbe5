use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaParams {
    pub mean: Vec<f64>,
    /// `m` rows of length `d`, descending eigenvalue order.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Components that were replaced by zeros because the covariance rank
    /// was below the requested code dimension.
    pub zero_padded: Vec<bool>,
}

/// Relative eigenvalue threshold below which a component is treated as
/// absent.
const RANK_TOL: f64 = 1e-12;

pub fn fit_pca_frames(frames: &Array2<f64>, m: usize) -> Result<PcaParams> {
    let (n, d) = frames.dim();
    if m == 0 || m > d {
        return Err(Error::Config(format!("code dimension {m} outside 1..={d}")));
    }
    if n < 2 {
        return Err(Error::Dataset(format!("PCA needs at least 2 frames, got {n}")));
    }
    let mean = frames.mean_axis(Axis(0)).expect("non-empty");
    let centered = frames - &mean;
    let c = DMatrix::from_row_slice(n, d, centered.as_slice().expect("standard layout"));
    let cov = (c.transpose() * &c) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let all: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = all.iter().sum();
    let top = all[0];

    let mut components = Vec::with_capacity(m);
    let mut zero_padded = Vec::with_capacity(m);
    for &i in &order[..m] {
        let lambda = eig.eigenvalues[i];
        if lambda <= RANK_TOL * top.max(f64::MIN_POSITIVE) || top == 0.0 {
            components.push(vec![0.0; d]);
            zero_padded.push(true);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        zero_padded.push(false);
    }
    if zero_padded.iter().any(|&z| z) {
        log::warn!(
            "covariance rank below requested {m} components; {} component(s) zero-padded",
            zero_padded.iter().filter(|&&z| z).count()
        );
    }
    let ratio = all[..m]
        .iter()
        .zip(&zero_padded)
        .map(|(&l, &z)| if z || total == 0.0 { 0.0 } else { l / total })
        .collect();
    Ok(PcaParams {
        mean: mean.to_vec(),
        components,
        eigenvalues: all[..m].to_vec(),
        explained_variance_ratio: ratio,
        zero_padded,
    })
}

impl PcaParams {
    fn projection(&self) -> Array2<f64> {
        let d = self.mean.len();
        let m = self.components.len();
        Array2::from_shape_fn((d, m), |(i, j)| self.components[j][i])
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mean = ndarray::ArrayView1::from(&self.mean[..]);
        (x - &mean).dot(&self.projection())
    }

    pub fn inverse_transform(&self, code: &Array2<f64>) -> Array2<f64> {
        let mean = ndarray::ArrayView1::from(&self.mean[..]);
        code.dot(&self.projection().t()) + mean
    }
}

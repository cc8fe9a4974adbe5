use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue floor applied to every covariance estimate.
pub const COV_FLOOR: f64 = 1e-6;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "sequence {:?} vs template {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Element-wise mean of equally shaped sequences.
pub fn reference_mean(seqs: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Dataset("reference mean of an empty set".into()))?;
    let mut acc = Array2::<f64>::zeros(first.dim());
    for s in seqs {
        check_same_shape(s, first)?;
        acc += *s;
    }
    Ok(acc / seqs.len() as f64)
}

/// Mean over frames of the Euclidean distance between corresponding frames.
pub fn euclidean_metric(seq: &Array2<f64>, template: &Array2<f64>) -> Result<f64> {
    check_same_shape(seq, template)?;
    if seq.nrows() == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    let total: f64 = seq
        .axis_iter(Axis(0))
        .zip(template.axis_iter(Axis(0)))
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / seq.nrows() as f64)
}

/// Symmetric matrix with eigenvalues clamped from below, plus its inverse.
#[derive(Debug, Clone)]
pub(crate) struct FlooredCov {
    pub cov: DMatrix<f64>,
    pub inv: DMatrix<f64>,
}

pub(crate) fn floor_covariance(cov: &DMatrix<f64>, floor: f64) -> Result<FlooredCov> {
    let sym = (cov + cov.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance contains non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let cov = q * DMatrix::from_diagonal(&vals) * q.transpose();
    let inv = q * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l)) * q.transpose();
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("covariance is singular after regularisation".into()));
    }
    Ok(FlooredCov { cov, inv })
}

/// Reference statistics for the Mahalanobis metric: the per-frame
/// reference mean and the covariance of reference deviations from it,
/// pooled over all frames and repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mean: Array2<f64>,
    /// Row-major `m x m` regularised covariance.
    pub covariance: Vec<f64>,
    #[serde(skip)]
    precision: Vec<f64>,
}

impl ReferenceStats {
    pub fn fit(seqs: &[&Array2<f64>]) -> Result<Self> {
        let mean = reference_mean(seqs)?;
        let m = mean.ncols();
        let mut cov = DMatrix::<f64>::zeros(m, m);
        let mut n = 0usize;
        for s in seqs {
            for (row, mu) in s.axis_iter(Axis(0)).zip(mean.axis_iter(Axis(0))) {
                let d = DVector::from_iterator(m, row.iter().zip(mu.iter()).map(|(a, b)| a - b));
                cov += &d * d.transpose();
                n += 1;
            }
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        ReferenceStats::from_parts(mean, &(cov / denom))
    }

    /// Builds statistics from an explicit mean sequence and covariance,
    /// applying the eigenvalue floor.
    pub fn from_parts(mean: Array2<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let m = mean.ncols();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::Shape(format!(
                "covariance {}x{} for {m}-dimensional frames",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let floored = floor_covariance(cov, COV_FLOOR)?;
        Ok(ReferenceStats {
            mean,
            covariance: floored.cov.transpose().iter().copied().collect(),
            precision: floored.inv.transpose().iter().copied().collect(),
        })
    }

    fn precision(&self) -> DMatrix<f64> {
        let m = self.mean.ncols();
        if self.precision.len() == m * m {
            DMatrix::from_row_slice(m, m, &self.precision)
        } else {
            let cov = DMatrix::from_row_slice(m, m, &self.covariance);
            floor_covariance(&cov, COV_FLOOR)
                .map(|f| f.inv)
                .unwrap_or_else(|_| DMatrix::identity(m, m))
        }
    }
}

/// Mean over frames of `sqrt((x_t - mu_t)^T S^-1 (x_t - mu_t))`.
pub fn mahalanobis_metric(seq: &Array2<f64>, stats: &ReferenceStats) -> Result<f64> {
    check_same_shape(seq, &stats.mean)?;
    let m = seq.ncols();
    let p = stats.precision();
    let mut total = 0.0;
    for (row, mu) in seq.axis_iter(Axis(0)).zip(stats.mean.axis_iter(Axis(0))) {
        let d = DVector::from_iterator(m, row.iter().zip(mu.iter()).map(|(a, b)| a - b));
        let q = (d.transpose() * &p * &d)[(0, 0)];
        if !q.is_finite() {
            return Err(Error::Numerical("non-finite Mahalanobis quadratic form".into()));
        }
        total += q.max(0.0).sqrt();
    }
    Ok(total / seq.nrows() as f64)
}

/// Dynamic time warping with Euclidean frame cost and unit steps
/// `(1,0) (0,1) (1,1)`, normalised by the summed sequence lengths.
pub fn dtw_metric(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Shape("DTW of an empty sequence".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "DTW frame dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let cost = |i: usize, j: usize| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok(dtw_cost(a.nrows(), b.nrows(), cost) / (a.nrows() + b.nrows()) as f64)
}

/// Unnormalised DTW accumulated cost for an arbitrary local cost.
pub fn dtw_cost(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = cost(i - 1, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distance::{floor_covariance, COV_FLOOR};
use crate::error::{Error, Result};

/// Settings for expectation-maximisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub components: usize,
    /// Stop once the mean per-frame log-likelihood improves by less.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub kmeans_iterations: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 6,
            tolerance: 1e-6,
            max_iterations: 200,
            kmeans_iterations: 20,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Inverse of the lower Cholesky factor of `cov`.
    l_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        let floored = floor_covariance(cov, COV_FLOOR)?;
        let chol = floored
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("component covariance is not positive definite".into()))?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Component {
            weight,
            mean,
            cov: floored.cov,
            l_inv,
            log_norm: -0.5 * (m as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_pdf(&self, x: ArrayView1<f64>) -> f64 {
        let d = DVector::from_iterator(self.mean.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = &self.l_inv * d;
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Full-covariance Gaussian mixture over frame vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GmmFile", into = "GmmFile")]
pub struct GmmModel {
    dim: usize,
    components: Vec<Component>,
}

pub const GMM_FORMAT: &str = "rehab-gmm";
pub const GMM_VERSION: u32 = 1;

/// On-disk mixture layout. Covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmFile {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

impl From<GmmModel> for GmmFile {
    fn from(m: GmmModel) -> Self {
        GmmFile {
            format: GMM_FORMAT.into(),
            version: GMM_VERSION,
            dim: m.dim,
            weights: m.weights(),
            means: m.components.iter().map(|c| c.mean.iter().copied().collect()).collect(),
            covariances: m
                .components
                .iter()
                .map(|c| c.cov.transpose().iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<GmmFile> for GmmModel {
    type Error = Error;

    fn try_from(f: GmmFile) -> Result<Self> {
        if f.format != GMM_FORMAT || f.version != GMM_VERSION {
            return Err(Error::Serde(format!(
                "unsupported mixture file {} v{}",
                f.format, f.version
            )));
        }
        GmmModel::new(f.weights, f.means, f.covariances)
    }
}

impl GmmModel {
    /// Builds a mixture from weights, means and row-major covariances.
    /// Weights are renormalised; covariances get the eigenvalue floor.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        let c = weights.len();
        if c == 0 || means.len() != c || covariances.len() != c {
            return Err(Error::Shape(format!(
                "mixture with {} weights, {} means, {} covariances",
                c,
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain(
                "mixture weights must be non-negative with positive sum".into(),
            ));
        }
        let mut components = Vec::with_capacity(c);
        for ((w, mu), cov) in weights.iter().zip(means).zip(covariances) {
            if mu.len() != dim || cov.len() != dim * dim {
                return Err(Error::Shape("inconsistent mixture component dimensions".into()));
            }
            components.push(Component::new(
                w / total,
                DVector::from_vec(mu),
                &DMatrix::from_row_slice(dim, dim, &cov),
            )?);
        }
        Ok(GmmModel { dim, components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, c: usize) -> Vec<f64> {
        self.components[c].mean.iter().copied().collect()
    }

    /// Row-major covariance of component `c` after flooring.
    pub fn covariance(&self, c: usize) -> Vec<f64> {
        self.components[c].cov.transpose().iter().copied().collect()
    }

    /// `log p(x)` for one frame, via log-sum-exp over components.
    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| c.weight.ln() + c.log_pdf(x)).collect();
        log_sum_exp(&logs)
    }

    pub fn to_file(&self) -> GmmFile {
        self.clone().into()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of a repetition, summed over frames.
pub fn gmm_nll(model: &GmmModel, seq: &Array2<f64>) -> Result<f64> {
    if seq.ncols() != model.dim {
        return Err(Error::Shape(format!(
            "mixture over {} dimensions, sequence has {}",
            model.dim,
            seq.ncols()
        )));
    }
    let mut total = 0.0;
    for (t, row) in seq.axis_iter(Axis(0)).enumerate() {
        let lp = model.log_density(row);
        if !lp.is_finite() {
            return Err(Error::Numerical(format!("non-finite log-density at frame {t}")));
        }
        total -= lp;
    }
    Ok(total)
}

/// Result of [`fit_gmm`]. `log_likelihood[k]` is the total data
/// log-likelihood under the parameters after `k` M-steps.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns hard labels.
fn kmeans(x: &Array2<f64>, k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut centers: Vec<usize> = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut means: Array2<f64> = x.select(Axis(0), &centers);
    let mut labels = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(x.row(i), means.row(c))))
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
                .0;
            if best != *l {
                *l = best;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(means.dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += &x.row(i);
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                let mut row = means.row_mut(c);
                row.assign(&(&sums.row(c) / n as f64));
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn global_covariance(x: &Array2<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let m = x.ncols();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for row in x.axis_iter(Axis(0)) {
        let d = DVector::from_iterator(m, row.iter().zip(mean.iter()).map(|(a, b)| a - b));
        cov += &d * d.transpose();
    }
    cov / n as f64
}

/// Weighted maximum-likelihood estimate of one component.
fn m_step_component(x: &Array2<f64>, resp: &[f64], nk: f64) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.ncols();
    let mut mean = DVector::<f64>::zeros(m);
    for (row, r) in x.axis_iter(Axis(0)).zip(resp) {
        for j in 0..m {
            mean[j] += r * row[j];
        }
    }
    mean /= nk;
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for (row, r) in x.axis_iter(Axis(0)).zip(resp) {
        let d = DVector::from_iterator(m, row.iter().zip(mean.iter()).map(|(a, b)| a - b));
        cov += (&d * d.transpose()) * *r;
    }
    (mean, cov / nk)
}

/// Fits a mixture to pooled frames by EM with k-means initialisation.
///
/// A component whose responsibility mass vanishes is re-seeded once on a
/// random frame with the global covariance; a second collapse of the same
/// component is a numerical error.
pub fn fit_gmm(frames: &Array2<f64>, config: &GmmConfig, seed: u64) -> Result<GmmFit> {
    let (n, m) = frames.dim();
    let k = config.components;
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if n < k {
        return Err(Error::Dataset(format!(
            "{n} frames cannot support {k} mixture components"
        )));
    }
    if m == 0 {
        return Err(Error::Shape("zero-dimensional frames".into()));
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = kmeans(frames, k, config.kmeans_iterations, &mut rng);
    let global = global_covariance(frames);

    let mut resp = vec![vec![0.0; n]; k];
    for (i, &l) in labels.iter().enumerate() {
        resp[l][i] = 1.0;
    }
    let mut reseeded = vec![false; k];
    let mut components = m_step(frames, &resp, &global, &mut reseeded, &mut rng)?;
    let mut history = Vec::new();
    let mut converged = false;
    for iter in 0..=config.max_iterations {
        let ll = e_step(frames, &components, &mut resp)?;
        history.push(ll);
        if iter > 0 {
            let prev = history[iter - 1];
            if (ll - prev) / n as f64 <= config.tolerance {
                converged = true;
                break;
            }
        }
        if iter == config.max_iterations {
            break;
        }
        components = m_step(frames, &resp, &global, &mut reseeded, &mut rng)?;
    }
    if !converged {
        log::warn!(
            "mixture EM stopped after {} iterations without reaching tolerance {}",
            config.max_iterations,
            config.tolerance
        );
    }
    Ok(GmmFit {
        model: GmmModel { dim: m, components },
        log_likelihood: history,
        converged,
    })
}

fn m_step(
    x: &Array2<f64>,
    resp: &[Vec<f64>],
    global: &DMatrix<f64>,
    reseeded: &mut [bool],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Component>> {
    let n = x.nrows() as f64;
    let mut out = Vec::with_capacity(resp.len());
    for (c, r) in resp.iter().enumerate() {
        let nk: f64 = r.iter().sum();
        if nk < 1e-8 * n.max(1.0) || nk < 1e-10 {
            if reseeded[c] {
                return Err(Error::Numerical(format!("mixture component {c} collapsed twice")));
            }
            reseeded[c] = true;
            let i = rng.gen_range(0..x.nrows());
            let mean = DVector::from_iterator(x.ncols(), x.row(i).iter().copied());
            out.push(Component::new(1.0 / resp.len() as f64, mean, global)?);
            continue;
        }
        let (mean, cov) = m_step_component(x, r, nk);
        out.push(Component::new(nk / n, mean, &cov)?);
    }
    let total: f64 = out.iter().map(|c| c.weight).sum();
    for c in &mut out {
        c.weight /= total;
    }
    Ok(out)
}

fn e_step(x: &Array2<f64>, comps: &[Component], resp: &mut [Vec<f64>]) -> Result<f64> {
    let mut ll = 0.0;
    let mut logs = vec![0.0; comps.len()];
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        for (l, c) in logs.iter_mut().zip(comps) {
            *l = c.weight.ln() + c.log_pdf(row);
        }
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!("non-finite mixture likelihood at frame {i}")));
        }
        ll += lse;
        for (r, l) in resp.iter_mut().zip(&logs) {
            r[i] = (l - lse).exp();
        }
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand_distr::{Distribution, Normal};

    fn identity(m: usize) -> Vec<f64> {
        DMatrix::<f64>::identity(m, m).iter().copied().collect()
    }

    #[test]
    fn standard_normal_nll_at_mean() {
        let model = GmmModel::new(vec![1.0], vec![vec![0.0; 4]], vec![identity(4)]).unwrap();
        let nll = gmm_nll(&model, &Array2::zeros((1, 4))).unwrap();
        assert!((nll - 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((nll - 3.67575).abs() < 1e-5);
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((400, 3), |(_, j)| nrm.sample(&mut rng) * (j + 1) as f64 + j as f64);
        let fit = fit_gmm(
            &x,
            &GmmConfig {
                components: 1,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let mean: Array1<f64> = x.mean_axis(Axis(0)).unwrap();
        for (a, b) in fit.model.mean(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let cov = global_covariance(&x);
        for (a, b) in fit.model.covariance(0).iter().zip(cov.transpose().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nrm = Normal::new(0.0, 0.5).unwrap();
        let x = Array2::from_shape_fn((300, 2), |(i, _)| nrm.sample(&mut rng) + (i % 3) as f64 * 4.0);
        let fit = fit_gmm(
            &x,
            &GmmConfig {
                components: 3,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        assert!(fit.converged);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert!((fit.model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_frames_stay_finite() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| if j == 0 { (i % 2) as f64 } else { 1.0 });
        let fit = fit_gmm(
            &x,
            &GmmConfig {
                components: 2,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(gmm_nll(&fit.model, &x).unwrap().is_finite());
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let x = Array2::zeros((3, 2));
        assert!(matches!(fit_gmm(&x, &GmmConfig::default(), 0), Err(Error::Dataset(_))));
    }

    #[test]
    fn serde_round_trip_preserves_density() {
        let model = GmmModel::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 1.0], vec![2.0, -1.0]],
            vec![vec![2.0, 0.3, 0.3, 1.0], identity(2)],
        )
        .unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: GmmModel = serde_json::from_str(&text).unwrap();
        let x = Array2::from_shape_fn((5, 2), |(t, d)| (t as f64 - d as f64) * 0.7);
        assert!((gmm_nll(&model, &x).unwrap() - gmm_nll(&back, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}

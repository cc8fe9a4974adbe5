//! Independent oracles shared by the integration tests and the acceptance
//! harness. None of these call into the code they check.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rehab::assessnet::{AssessModel, ModelConfig};
use rehab::dataset::{BodyPartMap, Correctness};
use rehab::trainer::{batch_loss_and_grads, Example};

/// Minimum over every monotone warping path with steps (1,0), (0,1),
/// (1,1) of the summed `|a_i - b_j|`, divided by `len(a) + len(b)`.
pub fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best / (a.len() + b.len()) as f64
}

/// Every sequence of length `1..=max_len` over `alphabet`.
pub fn all_sequences(alphabet: &[f64], max_len: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Determinant and inverse by Gauss-Jordan elimination with partial
/// pivoting.
pub fn det_inverse(m: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut det = 1.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if p != col {
            a.swap(p, col);
            inv.swap(p, col);
            det = -det;
        }
        let piv = a[col][col];
        det *= piv;
        for j in 0..n {
            a[col][j] /= piv;
            inv[col][j] /= piv;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    (det, inv)
}

/// Sum over frames of `-ln sum_c w_c N(x | mu_c, S_c)`, evaluating each
/// density directly rather than in log space.
pub fn naive_gmm_nll(weights: &[f64], means: &[Vec<f64>], covs: &[Vec<Vec<f64>>], frames: &Array2<f64>) -> f64 {
    let d = means[0].len();
    let norm: Vec<(f64, Vec<Vec<f64>>)> = covs.iter().map(|c| det_inverse(c)).collect();
    frames
        .rows()
        .into_iter()
        .map(|x| {
            let p: f64 = (0..weights.len())
                .map(|c| {
                    let (det, inv) = &norm[c];
                    let diff: Vec<f64> = (0..d).map(|i| x[i] - means[c][i]).collect();
                    let q: f64 = (0..d)
                        .map(|i| (0..d).map(|j| diff[i] * inv[i][j] * diff[j]).sum::<f64>())
                        .sum();
                    weights[c] * (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt()
                })
                .sum();
            -p.ln()
        })
        .sum()
}

/// Random symmetric positive-definite matrix `A A^T + floor I`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { floor } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with unit eigenvectors.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(m: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let n = m.len();
    let mut a = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut out: Vec<(f64, Vec<f64>)> = (0..n).map(|k| (a[k][k], v.iter().map(|r| r[k]).collect())).collect();
    out.sort_by(|x, y| y.0.total_cmp(&x.0));
    out
}

/// Sample covariance (`n - 1` denominator) of the rows of `x`.
pub fn sample_covariance(x: &Array2<f64>) -> Vec<Vec<f64>> {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    (0..n)
                        .map(|t| (x[[t, i]] - mean[i]) * (x[[t, j]] - mean[j]))
                        .sum::<f64>()
                        / (n as f64 - 1.0)
                })
                .collect()
        })
        .collect()
}

/// True if `a` equals `b` or `-b` within `tol` in every entry.
pub fn equal_up_to_sign(a: ArrayView1<f64>, b: &[f64], tol: f64) -> bool {
    let same = a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    let flipped = a.iter().zip(b).all(|(x, y)| (x + y).abs() <= tol);
    same || flipped
}

/// Outcome of a central finite-difference check over every scalar
/// parameter.
#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked as f64
    }
}

/// The hierarchical model shrunk to `D = 6`, `T = 16`: every block and
/// all four recurrent layers are present with small widths. The body-part
/// map is remapped away from the contiguous layout: the left arm takes
/// the first and last dimensions and the trunk moves to dimension 4.
pub fn tiny_model_config(seed: u64) -> ModelConfig {
    let map = BodyPartMap::new([vec![0, 5], vec![1], vec![2], vec![3], vec![4]]).unwrap();
    let mut cfg = ModelConfig::new(6, 16, map);
    cfg.part_channels = 2;
    cfg.merge_channels = 3;
    cfg.recurrent_units = vec![4, 3, 3, 4];
    cfg.pooled_units = 4;
    cfg.seed = seed;
    cfg
}

pub fn random_examples(n: usize, d: usize, t: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| Example {
            name: format!("rep{k}"),
            subject: 1,
            label: if k % 2 == 0 {
                Correctness::Correct
            } else {
                Correctness::Incorrect
            },
            input: Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0)),
            target: rng.gen_range(0.0..1.0),
        })
        .collect()
}

/// Compares back-propagated gradients of the batch MSE with central
/// differences of step `h`. An entry passes when the relative error is at
/// most `tol`; entries whose analytic and numeric values both lie below
/// `1e-9` (dead units) count as passes.
pub fn gradient_check(model: &mut AssessModel, batch: &[Example], h: f64, tol: f64) -> GradCheck {
    let refs: Vec<&Example> = batch.iter().collect();
    let (grads, _) = batch_loss_and_grads(model, &refs, None).unwrap();
    let ids: Vec<_> = model.store().ids().collect();
    let mut out = GradCheck {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for id in ids {
        let analytic = grads.get(id).clone();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let orig = model.store().get(id)[[r, c]];
            model.store_mut().get_mut(id)[[r, c]] = orig + h;
            let (_, lp) = batch_loss_and_grads(model, &refs, None).unwrap();
            model.store_mut().get_mut(id)[[r, c]] = orig - h;
            let (_, lm) = batch_loss_and_grads(model, &refs, None).unwrap();
            model.store_mut().get_mut(id)[[r, c]] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[[r, c]];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
            out.checked += 1;
            if rel <= tol {
                out.passed += 1;
            }
            out.worst = out.worst.max(rel);
        }
    }
    out
}

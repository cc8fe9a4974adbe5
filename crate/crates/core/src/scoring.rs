//! Logistic mapping of performance-metric values to quality scores in
//! `(0, 1)`. Larger metric values (worse performance) give lower scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Correctness;
use crate::error::{Error, Result};
use crate::metrics::MetricSeries;

pub const DEFAULT_ALPHA1: f64 = 3.2;
pub const DEFAULT_ALPHA2: f64 = 10.0;

/// Shape parameters and reference statistics of the scoring functions.
/// `mu` and `delta` are the mean and population standard deviation of the
/// absolute reference metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu: f64,
    pub delta: f64,
}

impl ScoringParams {
    pub fn from_reference(x: &[f64], alpha1: f64, alpha2: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("scoring needs at least one reference value".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("reference metric values must be finite".into()));
        }
        if alpha2 == 0.0 || !alpha1.is_finite() || !alpha2.is_finite() {
            return Err(Error::Config(format!(
                "invalid scoring shape alpha1={alpha1} alpha2={alpha2}"
            )));
        }
        let n = x.len() as f64;
        let mu = x.iter().map(|v| v.abs()).sum::<f64>() / n;
        let delta = (x.iter().map(|v| (v.abs() - mu).powi(2)).sum::<f64>() / n).sqrt();
        let p = ScoringParams {
            alpha1,
            alpha2,
            mu,
            delta,
        };
        if !(p.scale() > 0.0) {
            return Err(Error::Domain(
                "degenerate scoring scale: all reference values are zero".into(),
            ));
        }
        Ok(p)
    }

    pub fn with_defaults(x: &[f64]) -> Result<Self> {
        ScoringParams::from_reference(x, DEFAULT_ALPHA1, DEFAULT_ALPHA2)
    }

    /// `mu + 3 delta`.
    pub fn scale(&self) -> f64 {
        self.mu + 3.0 * self.delta
    }
}

/// `1 / (1 + exp(z))` without overflow for large `|z|`.
fn logistic_of_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn score_reference_value(x: f64, p: &ScoringParams) -> f64 {
    logistic_of_neg(x / p.scale() - p.alpha1)
}

/// Patient score; the correction `(y - x) / (alpha2 (mu + 3 delta))` sits
/// inside the exponent so that scores stay within `(0, 1)`.
pub fn score_patient_value(x: f64, y: f64, p: &ScoringParams) -> f64 {
    let s = p.scale();
    logistic_of_neg(x / s - p.alpha1 + (y - x) / (p.alpha2 * s))
}

pub fn score_reference(x: &[f64], p: &ScoringParams) -> Vec<f64> {
    x.iter().map(|v| score_reference_value(*v, p)).collect()
}

/// Scores index-aligned pairs `(x_k, y_k)`.
pub fn score_patient(x: &[f64], y: &[f64], p: &ScoringParams) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::Pairing(format!(
            "{} reference values for {} patient values; pair them first",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| score_patient_value(*a, *b, p)).collect())
}

/// For each patient value, in its original order, the reference value it
/// is paired with: equal ranks after sorting both series when lengths
/// match, otherwise the reference mean.
pub fn pair_reference(x: &[f64], y: &[f64]) -> Vec<f64> {
    if x.len() != y.len() {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        return vec![mean; y.len()];
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; y.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = xs[rank];
    }
    out
}

/// Scores for both series with parameters fitted on `x` and rank pairing.
pub fn score_series(x: &[f64], y: &[f64], alpha1: f64, alpha2: f64) -> Result<(Vec<f64>, Vec<f64>, ScoringParams)> {
    let p = ScoringParams::from_reference(x, alpha1, alpha2)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("patient metric values must be finite".into()));
    }
    let paired = pair_reference(x, y);
    let ys = score_patient(&paired, y, &p)?;
    Ok((score_reference(x, &p), ys, p))
}

/// A repetition with its metric value and quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub repetition: String,
    pub subject: u32,
    pub label: Correctness,
    pub metric: f64,
    pub score: f64,
}

/// Scores a between-subject metric series; reference records come first.
pub fn score_metric_series(
    series: &MetricSeries,
    alpha1: f64,
    alpha2: f64,
) -> Result<(Vec<ScoreRecord>, ScoringParams)> {
    let (xs, ys, p) = score_series(&series.reference, &series.patient, alpha1, alpha2)?;
    let make = |ids: &[(String, u32)], vals: &[f64], scores: Vec<f64>, label| {
        ids.iter()
            .zip(vals)
            .zip(scores)
            .map(|(((name, subject), m), s)| ScoreRecord {
                repetition: name.clone(),
                subject: *subject,
                label,
                metric: *m,
                score: s,
            })
            .collect::<Vec<_>>()
    };
    let mut out = make(&series.reference_ids, &series.reference, xs, Correctness::Correct);
    out.extend(make(&series.patient_ids, &series.patient, ys, Correctness::Incorrect));
    Ok((out, p))
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Serde(e.to_string())))
        .collect()
}

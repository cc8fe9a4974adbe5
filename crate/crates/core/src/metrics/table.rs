use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::{dtw_metric, euclidean_metric, mahalanobis_metric, reference_mean, ReferenceStats};
use super::gmm::{fit_gmm, gmm_nll, GmmConfig, GmmModel};
use super::separation::{scale_to_range, scaled_separation};
use crate::dataset::{Correctness, ExerciseDataset};
use crate::dimred::{pooled_frames, AutoencoderConfig, Reducer};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[serde(alias = "euclid")]
    Euclidean,
    #[serde(alias = "mahal")]
    Mahalanobis,
    Dtw,
    Gmm,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Euclidean,
        MetricKind::Mahalanobis,
        MetricKind::Dtw,
        MetricKind::Gmm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclid",
            MetricKind::Mahalanobis => "mahal",
            MetricKind::Dtw => "dtw",
            MetricKind::Gmm => "gmm",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}` (euclid, mahal, dtw, gmm)")))
    }
}

/// Whether reference statistics are pooled over all subjects or fitted
/// per subject and evaluated on that subject's own repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Between,
    Within,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Between, Mode::Within];

    pub fn short_name(self) -> &'static str {
        match self {
            Mode::Between => "between",
            Mode::Within => "within",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (between, within)")))
    }
}

/// A reduction applied before metric evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Raw,
    MaxVariance(usize),
    Pca(usize),
    Autoencoder(AutoencoderConfig),
}

impl Reduction {
    /// Row label, e.g. `raw`, `mv(3)`, `ae(4)`.
    pub fn label(&self) -> String {
        match self {
            Reduction::Raw => "raw".into(),
            Reduction::MaxVariance(m) => format!("mv({m})"),
            Reduction::Pca(m) => format!("pca({m})"),
            Reduction::Autoencoder(c) => format!("ae({})", c.encoder_units.last().copied().unwrap_or(0)),
        }
    }

    pub fn fit(&self, ds: &ExerciseDataset, seed: u64) -> Result<Option<Reducer>> {
        Ok(match self {
            Reduction::Raw => None,
            Reduction::MaxVariance(m) => Some(Reducer::fit_max_variance(ds, *m)?),
            Reduction::Pca(m) => Some(Reducer::fit_pca(ds, *m)?),
            Reduction::Autoencoder(c) => Some(Reducer::fit_autoencoder(ds, c, seed)?),
        })
    }
}

/// One repetition after reduction.
#[derive(Debug, Clone)]
pub struct CodedRep {
    pub name: String,
    pub subject_id: u32,
    pub correctness: Correctness,
    pub codes: Array2<f64>,
}

/// An exercise dataset with every repetition passed through a reducer.
#[derive(Debug, Clone)]
pub struct CodedSet {
    pub exercise_id: String,
    pub reduction: String,
    pub reference: Vec<CodedRep>,
    pub patient: Vec<CodedRep>,
}

impl CodedSet {
    /// Encodes all repetitions; `None` keeps the raw frames.
    pub fn encode(ds: &ExerciseDataset, reducer: Option<&Reducer>, label: &str) -> Result<Self> {
        let enc = |reps: &[crate::dataset::Repetition]| -> Result<Vec<CodedRep>> {
            reps.par_iter()
                .map(|r| {
                    Ok(CodedRep {
                        name: r.name.clone(),
                        subject_id: r.subject_id,
                        correctness: r.correctness,
                        codes: match reducer {
                            Some(red) => red.encode(r)?,
                            None => r.values.clone(),
                        },
                    })
                })
                .collect()
        };
        Ok(CodedSet {
            exercise_id: ds.exercise_id.clone(),
            reduction: label.to_string(),
            reference: enc(&ds.reference)?,
            patient: enc(&ds.patient)?,
        })
    }

    pub fn is_raw(&self) -> bool {
        self.reduction == "raw"
    }

    fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self
            .reference
            .iter()
            .chain(&self.patient)
            .map(|r| r.subject_id)
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Statistics fitted on reference codes for one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricModel {
    Template(Array2<f64>),
    Mahalanobis(ReferenceStats),
    Gmm(GmmModel),
}

impl MetricModel {
    pub fn fit(kind: MetricKind, refs: &[&Array2<f64>], gmm: &GmmConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            MetricKind::Euclidean | MetricKind::Dtw => MetricModel::Template(reference_mean(refs)?),
            MetricKind::Mahalanobis => MetricModel::Mahalanobis(ReferenceStats::fit(refs)?),
            MetricKind::Gmm => {
                let frames = pooled_frames(refs.iter().copied())?;
                MetricModel::Gmm(fit_gmm(&frames, gmm, seed)?.model)
            }
        })
    }

    pub fn evaluate(&self, kind: MetricKind, seq: &Array2<f64>) -> Result<f64> {
        match (kind, self) {
            (MetricKind::Euclidean, MetricModel::Template(t)) => euclidean_metric(seq, t),
            (MetricKind::Dtw, MetricModel::Template(t)) => dtw_metric(seq, t),
            (MetricKind::Mahalanobis, MetricModel::Mahalanobis(s)) => mahalanobis_metric(seq, s),
            (MetricKind::Gmm, MetricModel::Gmm(g)) => gmm_nll(g, seq),
            _ => Err(Error::Config(format!("model does not fit metric {kind}"))),
        }
    }
}

/// One metric value with its repetition identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub exercise: String,
    pub reduction: String,
    pub metric: MetricKind,
    pub mode: Mode,
    /// Subject whose statistics produced the value (within mode only).
    pub group: Option<u32>,
    pub repetition: String,
    pub subject: u32,
    pub label: Correctness,
    pub value: f64,
    /// Value after joint `[1, 20]` scaling within its series.
    pub scaled: f64,
}

/// Reference and patient metric values computed against the same fitted
/// statistics. Entries of `reference` and `patient` are aligned with the
/// repetition names in `reference_ids` and `patient_ids`.
#[derive(Debug, Clone)]
pub struct MetricSeries {
    pub kind: MetricKind,
    pub mode: Mode,
    pub subject: Option<u32>,
    pub reference_ids: Vec<(String, u32)>,
    pub patient_ids: Vec<(String, u32)>,
    pub reference: Vec<f64>,
    pub patient: Vec<f64>,
    /// Statistics the values were computed against.
    pub model: MetricModel,
}

impl MetricSeries {
    pub fn separation(&self) -> Result<f64> {
        scaled_separation(&self.reference, &self.patient)
    }

    pub fn records(&self, exercise: &str, reduction: &str) -> Result<Vec<MetricRecord>> {
        let (rs, ps) = scale_to_range(&self.reference, &self.patient)?;
        let make = |ids: &[(String, u32)], vals: &[f64], scaled: &[f64], label| {
            ids.iter()
                .zip(vals)
                .zip(scaled)
                .map(|(((name, subject), v), s)| MetricRecord {
                    exercise: exercise.to_string(),
                    reduction: reduction.to_string(),
                    metric: self.kind,
                    mode: self.mode,
                    group: self.subject,
                    repetition: name.clone(),
                    subject: *subject,
                    label,
                    value: *v,
                    scaled: *s,
                })
                .collect::<Vec<_>>()
        };
        let mut out = make(&self.reference_ids, &self.reference, &rs, Correctness::Correct);
        out.extend(make(&self.patient_ids, &self.patient, &ps, Correctness::Incorrect));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableOptions {
    pub gmm: GmmConfig,
    pub seed: u64,
}

fn evaluate_all(model: &MetricModel, kind: MetricKind, reps: &[&CodedRep]) -> Result<Vec<f64>> {
    reps.par_iter().map(|r| model.evaluate(kind, &r.codes)).collect()
}

fn series_from(
    set: &CodedSet,
    kind: MetricKind,
    mode: Mode,
    subject: Option<u32>,
    opts: &TableOptions,
) -> Result<Option<MetricSeries>> {
    let keep = |r: &&CodedRep| subject.is_none_or(|s| r.subject_id == s);
    let refs: Vec<&CodedRep> = set.reference.iter().filter(keep).collect();
    let pats: Vec<&CodedRep> = set.patient.iter().filter(keep).collect();
    if refs.is_empty() || pats.is_empty() {
        return Ok(None);
    }
    let seqs: Vec<&Array2<f64>> = refs.iter().map(|r| &r.codes).collect();
    let seed = derive_seed(opts.seed, u64::from(subject.unwrap_or(u32::MAX)));
    let model = MetricModel::fit(kind, &seqs, &opts.gmm, seed)?;
    let ids = |v: &[&CodedRep]| v.iter().map(|r| (r.name.clone(), r.subject_id)).collect();
    Ok(Some(MetricSeries {
        kind,
        mode,
        subject,
        reference_ids: ids(&refs),
        patient_ids: ids(&pats),
        reference: evaluate_all(&model, kind, &refs)?,
        patient: evaluate_all(&model, kind, &pats)?,
        model,
    }))
}

/// Metric series for one coded exercise: a single pooled series in
/// between mode, one series per subject in within mode. Subjects lacking
/// either correct or incorrect repetitions are skipped.
pub fn series_for(set: &CodedSet, kind: MetricKind, mode: Mode, opts: &TableOptions) -> Result<Vec<MetricSeries>> {
    if kind == MetricKind::Gmm && set.is_raw() {
        return Err(Error::Unsupported(
            "mixture metric on unreduced data; choose a reducer".into(),
        ));
    }
    match mode {
        Mode::Between => Ok(series_from(set, kind, mode, None, opts)?.into_iter().collect()),
        Mode::Within => {
            let mut out = Vec::new();
            for s in set.subjects() {
                match series_from(set, kind, mode, Some(s), opts)? {
                    Some(series) => out.push(series),
                    None => log::warn!(
                        "exercise {}: subject {s} lacks correct or incorrect repetitions, skipped",
                        set.exercise_id
                    ),
                }
            }
            if out.is_empty() {
                return Err(Error::Dataset(format!(
                    "exercise {}: no subject has both correct and incorrect repetitions",
                    set.exercise_id
                )));
            }
            Ok(out)
        }
    }
}

/// Separation degree of a group of series: the single value in between
/// mode, the unweighted mean over subjects in within mode.
fn mean_separation(series: &[MetricSeries]) -> Result<f64> {
    let vals = series.iter().map(|s| s.separation()).collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Cell {
    Value {
        mean: f64,
        std: f64,
        per_exercise: Vec<f64>,
    },
    Unsupported,
}

impl Cell {
    pub(crate) fn from_values(v: Vec<f64>) -> Cell {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Cell::Value {
            mean,
            std,
            per_exercise: v,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            Cell::Value { mean, .. } => Some(*mean),
            Cell::Unsupported => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Value { mean, std, .. } => format!("{mean:.3} ({std:.3})"),
            Cell::Unsupported => "--".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub reduction: String,
    pub mode: Mode,
    pub cells: Vec<Cell>,
}

/// Separation degree for each (reduction, mode) row and metric column,
/// aggregated over exercises, plus every underlying metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub exercises: Vec<String>,
    pub metrics: Vec<MetricKind>,
    pub rows: Vec<TableRow>,
    pub records: Vec<MetricRecord>,
}

impl SeparationReport {
    pub fn cell(&self, reduction: &str, mode: Mode, metric: MetricKind) -> Option<&Cell> {
        let col = self.metrics.iter().position(|m| *m == metric)?;
        self.rows
            .iter()
            .find(|r| r.reduction == reduction && r.mode == mode)
            .map(|r| &r.cells[col])
    }

    /// Grid CSV: one row per (reduction, mode), one column per metric,
    /// cells `mean (std)` to three decimals or `--`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["reduction".to_string(), "mode".to_string()];
        header.extend(self.metrics.iter().map(|m| m.short_name().to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.reduction.clone(), row.mode.short_name().to_string()];
            rec.extend(row.cells.iter().map(Cell::render));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

struct ExerciseCells {
    exercise: String,
    /// Indexed `[reduction][mode][metric]`.
    values: Vec<Vec<Vec<Option<f64>>>>,
    records: Vec<MetricRecord>,
}

fn exercise_cells(
    index: usize,
    ds: &ExerciseDataset,
    reductions: &[Reduction],
    metrics: &[MetricKind],
    modes: &[Mode],
    opts: &TableOptions,
) -> Result<ExerciseCells> {
    let mut values = Vec::with_capacity(reductions.len());
    let mut records = Vec::new();
    for (ri, red) in reductions.iter().enumerate() {
        let seed = derive_seed(opts.seed, (index as u64) << 8 | ri as u64);
        let label = red.label();
        log::info!("exercise {}: fitting {label}", ds.exercise_id);
        let reducer = red
            .fit(ds, seed)
            .map_err(|e| e.in_stage(format!("reduce {label} on exercise {}", ds.exercise_id)))?;
        let set = CodedSet::encode(ds, reducer.as_ref(), &label)?;
        let cell_opts = TableOptions { seed, ..*opts };
        let mut per_mode = Vec::with_capacity(modes.len());
        for &mode in modes {
            let mut per_metric = Vec::with_capacity(metrics.len());
            for &kind in metrics {
                match series_for(&set, kind, mode, &cell_opts) {
                    Ok(series) => {
                        per_metric.push(Some(mean_separation(&series)?));
                        for s in &series {
                            records.extend(s.records(&ds.exercise_id, &label)?);
                        }
                    }
                    Err(Error::Unsupported(_)) => per_metric.push(None),
                    Err(e) => {
                        return Err(e.in_stage(format!(
                            "{kind} {mode} metric for {label} on exercise {}",
                            ds.exercise_id
                        )))
                    }
                }
            }
            per_mode.push(per_metric);
        }
        values.push(per_mode);
    }
    Ok(ExerciseCells {
        exercise: ds.exercise_id.clone(),
        values,
        records,
    })
}

/// Builds the separation-degree grid over exercises. Each reducer is
/// fitted once per exercise on that exercise's reference repetitions and
/// shared by both modes; metric statistics follow the mode.
pub fn metric_table(
    datasets: &[ExerciseDataset],
    reductions: &[Reduction],
    metrics: &[MetricKind],
    modes: &[Mode],
    opts: &TableOptions,
) -> Result<SeparationReport> {
    if datasets.is_empty() || reductions.is_empty() || metrics.is_empty() || modes.is_empty() {
        return Err(Error::Config(
            "metric table needs datasets, reductions, metrics and modes".into(),
        ));
    }
    let per_ex = datasets
        .par_iter()
        .enumerate()
        .map(|(i, ds)| exercise_cells(i, ds, reductions, metrics, modes, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ri, red) in reductions.iter().enumerate() {
        for (mi, &mode) in modes.iter().enumerate() {
            let cells = (0..metrics.len())
                .map(|k| {
                    let vals: Option<Vec<f64>> = per_ex.iter().map(|e| e.values[ri][mi][k]).collect();
                    vals.map_or(Cell::Unsupported, Cell::from_values)
                })
                .collect();
            rows.push(TableRow {
                reduction: red.label(),
                mode,
                cells,
            });
        }
    }
    Ok(SeparationReport {
        exercises: per_ex.iter().map(|e| e.exercise.clone()).collect(),
        metrics: metrics.to_vec(),
        rows,
        records: per_ex.into_iter().flat_map(|e| e.records).collect(),
    })
}

/// Writes per-repetition metric values as CSV.
pub fn write_metric_records(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

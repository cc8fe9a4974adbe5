//! End-to-end stages (ingest, reduce, metric, score, train, eval) with
//! artifacts persisted under a root directory.
//!
//! Layout below the root:
//!
//! ```text
//! dataset/      e<ex>.json (source + fingerprint), e<ex>.manifest.csv
//! reducer/      e<ex>-<key>.json
//! metrics/      e<ex>-<key>.csv (per-repetition values), e<ex>-<key>.json
//! gmm/          e<ex>-<key>.json (mixture metrics only)
//! scores/       e<ex>-<key>.csv, e<ex>-<key>.params.json
//! checkpoints/  e<ex>-<key>-run<r>.json
//! reports/      e<ex>-<key>-{train,eval}.json, -loss.csv, -predictions.csv,
//!               -residuals.csv, -timing.json; table and sweep grids
//! ```
//!
//! Each key is a truncated SHA-256 of the stage's configuration chained
//! with the key of the stage it consumes, so identical configurations
//! map to identical files and any change re-keys every downstream stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate, train_runs, Example, Prediction, RunOutcome, TrainConfig, TrainReport, Variant};
use crate::assessnet::{AssessModel, ModelConfig, ModelSpec};
use crate::dataset::{
    ingest, leave_one_subject_out, split, synthesize, write_manifest, Correctness, ExerciseDataset, Partition, Schema,
    SynthConfig,
};
use crate::dimred::Reducer;
use crate::error::{Error, Result};
use crate::metrics::{
    read_metric_records, series_for, write_metric_records, CodedSet, GmmConfig, MetricKind, MetricModel, MetricRecord,
    Mode, Reduction, TableOptions,
};
use crate::scoring::{
    read_scores, score_series, write_scores, ScoreRecord, ScoringParams, DEFAULT_ALPHA1, DEFAULT_ALPHA2,
};
use crate::seed::derive_seed;

/// Environment variable naming the artifact root when no output
/// directory is given.
pub const ARTIFACT_ENV: &str = "REHAB_ARTIFACTS";

const SALT_REDUCER: u64 = 1;
const SALT_METRIC: u64 = 2;
const SALT_SPLIT: u64 = 3;
const SALT_TRAIN: u64 = 4;

/// Where repetitions come from.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Directory { root: PathBuf, schema: Schema },
    Synthetic { config: SynthConfig, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<ExerciseDataset> {
        match self {
            DatasetSource::Directory { root, schema } => ingest(root, schema),
            DatasetSource::Synthetic { config, seed } => synthesize(config, *seed),
        }
    }
}

/// SHA-256 over labels, subjects, names and value bits.
pub fn dataset_fingerprint(ds: &ExerciseDataset) -> String {
    let mut h = Sha256::new();
    h.update(ds.exercise_id.as_bytes());
    h.update((ds.canonical_t as u64).to_le_bytes());
    for rep in ds.all() {
        h.update(rep.name.as_bytes());
        h.update([rep.correctness as u8]);
        h.update(rep.subject_id.to_le_bytes());
        for v in rep.values.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Sixteen hex digits of SHA-256 over the JSON form of `value`.
pub fn content_key(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Topology settings shared by every exercise; input size, length and
/// body-part map come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelTemplate {
    pub variant: Variant,
    pub pyramid_factors: Vec<usize>,
    pub branch_kernels: Vec<usize>,
    pub part_channels: usize,
    pub merge_channels: usize,
    pub dropout: f64,
    pub recurrent_units: Vec<usize>,
    pub pooled_units: usize,
}

impl Default for ModelTemplate {
    fn default() -> Self {
        let c = ModelConfig::new(1, 8, crate::dataset::BodyPartMap::contiguous(5).expect("five dims"));
        ModelTemplate {
            variant: Variant::Full,
            pyramid_factors: c.pyramid_factors,
            branch_kernels: c.branch_kernels,
            part_channels: c.part_channels,
            merge_channels: c.merge_channels,
            dropout: c.dropout,
            recurrent_units: c.recurrent_units,
            pooled_units: c.pooled_units,
        }
    }
}

impl ModelTemplate {
    pub fn config(&self, ds: &ExerciseDataset) -> ModelConfig {
        ModelConfig {
            pyramid_factors: self.pyramid_factors.clone(),
            branch_kernels: self.branch_kernels.clone(),
            part_channels: self.part_channels,
            merge_channels: self.merge_channels,
            dropout: self.dropout,
            recurrent_units: self.recurrent_units.clone(),
            pooled_units: self.pooled_units,
            ..ModelConfig::for_dataset(ds)
        }
    }

    pub fn spec(&self, ds: &ExerciseDataset) -> ModelSpec {
        self.variant.spec(&self.config(ds))
    }
}

/// Choices for one end-to-end run. Stage seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub reduction: Reduction,
    pub metric: MetricKind,
    pub mode: Mode,
    pub gmm: GmmConfig,
    pub alpha1: f64,
    pub alpha2: f64,
    pub model: ModelTemplate,
    pub train: TrainConfig,
    /// Evaluate on this subject and train on the others instead of a
    /// random split.
    pub holdout_subject: Option<u32>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            reduction: Reduction::Autoencoder(Default::default()),
            metric: MetricKind::Gmm,
            mode: Mode::Between,
            gmm: GmmConfig::default(),
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            model: ModelTemplate::default(),
            train: TrainConfig::default(),
            holdout_subject: None,
            seed: 0,
        }
    }
}

/// Stage keys for one dataset and configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageKeys {
    pub reducer: String,
    pub metric: String,
    pub score: String,
    pub train: String,
}

impl PipelineConfig {
    pub fn keys(&self, fingerprint: &str) -> StageKeys {
        let reducer = content_key(&("reducer", fingerprint, &self.reduction, self.seed));
        let metric = content_key(&("metric", &reducer, self.metric, self.mode, &self.gmm));
        let score = content_key(&("score", &metric, self.alpha1, self.alpha2));
        let train = content_key(&(
            "train",
            &score,
            &self.model,
            &self.train,
            self.holdout_subject,
            self.seed,
        ));
        StageKeys {
            reducer,
            metric,
            score,
            train,
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_SPLIT)
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_TRAIN)
    }
}

/// Ingest record: how to reload the dataset and what it must hash to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub exercise: String,
    pub source: DatasetSource,
    pub fingerprint: String,
    pub correct: usize,
    pub incorrect: usize,
    pub subjects: Vec<u32>,
    pub dims: usize,
    pub canonical_t: usize,
}

/// An artifact root directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn path(&self, dir: &str, name: &str) -> PathBuf {
        self.root.join(dir).join(name)
    }

    fn ensure_dir(&self, dir: &str) -> Result<PathBuf> {
        let d = self.root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn write_text(&self, dir: &str, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.ensure_dir(dir)?.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json(&self, dir: &str, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        self.write_text(dir, name, &serde_json::to_string_pretty(value)?)
    }

    /// Fails with [`Error::MissingArtifact`] naming `producer` if absent.
    pub fn require(&self, dir: &str, name: &str, producer: &'static str) -> Result<PathBuf> {
        let path = self.path(dir, name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, producer })
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, dir: &str, name: &str, producer: &'static str) -> Result<T> {
        let path = self.require(dir, name, producer)?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of every artifact file, keyed by path relative to the root.
    /// Wall-clock timing files are left out; they differ between runs by
    /// nature.
    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(Error::io(&dir, e)),
            };
            for entry in entries {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if !path.to_string_lossy().ends_with("-timing.json") {
                    let rel = path.strip_prefix(&self.root).unwrap_or(&path);
                    out.insert(rel.to_string_lossy().replace('\\', "/"), file_hash(&path)?);
                }
            }
        }
        Ok(out)
    }
}

fn stem(exercise: &str) -> String {
    format!("e{exercise}")
}

fn keyed(exercise: &str, key: &str) -> String {
    format!("e{exercise}-{key}")
}

/// Loads the dataset, records its source and fingerprint, and writes the
/// manifest.
pub fn ingest_stage(art: &Artifacts, source: &DatasetSource) -> Result<(ExerciseDataset, DatasetRecord)> {
    let ds = source.load()?;
    let record = DatasetRecord {
        exercise: ds.exercise_id.clone(),
        source: source.clone(),
        fingerprint: dataset_fingerprint(&ds),
        correct: ds.reference.len(),
        incorrect: ds.patient.len(),
        subjects: ds.subjects(),
        dims: ds.dims(),
        canonical_t: ds.canonical_t,
    };
    let s = stem(&ds.exercise_id);
    art.write_json("dataset", &format!("{s}.json"), &record)?;
    art.ensure_dir("dataset")?;
    write_manifest(&ds, &art.path("dataset", &format!("{s}.manifest.csv")))?;
    log::info!(
        "ingested exercise {}: {} correct, {} incorrect, {} subjects",
        ds.exercise_id,
        record.correct,
        record.incorrect,
        record.subjects.len()
    );
    Ok((ds, record))
}

/// Reloads an ingested dataset and checks it still matches its
/// fingerprint.
pub fn load_dataset(art: &Artifacts, exercise: &str) -> Result<(ExerciseDataset, DatasetRecord)> {
    let record: DatasetRecord = art.read_json("dataset", &format!("{}.json", stem(exercise)), "ingest")?;
    let ds = record.source.load()?;
    let fp = dataset_fingerprint(&ds);
    if fp != record.fingerprint {
        return Err(Error::Dataset(format!(
            "exercise {exercise} changed since ingest (fingerprint {} vs {}); rerun `rehab ingest`",
            &fp[..12],
            &record.fingerprint[..12]
        )));
    }
    Ok((ds, record))
}

/// Every exercise with an ingest record, sorted numerically where possible.
pub fn ingested_exercises(art: &Artifacts) -> Result<Vec<String>> {
    let dir = art.root.join("dataset");
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    let mut out: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix('e')
                .and_then(|n| n.strip_suffix(".json"))
                .filter(|n| !n.contains('.'))
                .map(str::to_string)
        })
        .collect();
    out.sort_by(|a, b| match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    });
    Ok(out)
}

/// Fits the reducer on the reference repetitions. Raw data needs no
/// artifact.
pub fn reduce_stage(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<Option<Reducer>> {
    let keys = cfg.keys(fp);
    let reducer = cfg.reduction.fit(ds, derive_seed(cfg.seed, SALT_REDUCER))?;
    if let Some(r) = &reducer {
        art.ensure_dir("reducer")?;
        r.save(&art.path("reducer", &format!("{}.json", keyed(&ds.exercise_id, &keys.reducer))))?;
    }
    Ok(reducer)
}

pub fn load_reducer(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<Option<Reducer>> {
    if cfg.reduction == Reduction::Raw {
        return Ok(None);
    }
    let keys = cfg.keys(fp);
    let path = art.require(
        "reducer",
        &format!("{}.json", keyed(&ds.exercise_id, &keys.reducer)),
        "reduce",
    )?;
    Reducer::load(&path).map(Some)
}

/// Separation summary written next to the metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub exercise: String,
    pub reduction: String,
    pub metric: MetricKind,
    pub mode: Mode,
    /// Separation degree (mean over subjects in within mode).
    pub separation: f64,
    pub per_group: Vec<(Option<u32>, f64)>,
}

pub struct MetricOutput {
    pub records: Vec<MetricRecord>,
    pub summary: MetricSummary,
}

/// Computes per-repetition metric values with the stored reducer.
pub fn metric_stage(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<MetricOutput> {
    let keys = cfg.keys(fp);
    let reducer = load_reducer(art, ds, fp, cfg)?;
    let label = cfg.reduction.label();
    let set = CodedSet::encode(ds, reducer.as_ref(), &label)?;
    let opts = TableOptions {
        gmm: cfg.gmm,
        seed: derive_seed(cfg.seed, SALT_METRIC),
    };
    let series = series_for(&set, cfg.metric, cfg.mode, &opts)?;
    let mut records = Vec::new();
    let mut per_group = Vec::new();
    for s in &series {
        records.extend(s.records(&ds.exercise_id, &label)?);
        per_group.push((s.subject, s.separation()?));
    }
    let separation = per_group.iter().map(|(_, v)| v).sum::<f64>() / per_group.len() as f64;
    let name = keyed(&ds.exercise_id, &keys.metric);
    art.ensure_dir("metrics")?;
    write_metric_records(&art.path("metrics", &format!("{name}.csv")), &records)?;
    let summary = MetricSummary {
        exercise: ds.exercise_id.clone(),
        reduction: label,
        metric: cfg.metric,
        mode: cfg.mode,
        separation,
        per_group,
    };
    art.write_json("metrics", &format!("{name}.json"), &summary)?;
    if cfg.metric == MetricKind::Gmm {
        let models: Vec<(Option<u32>, &MetricModel)> = series.iter().map(|s| (s.subject, &s.model)).collect();
        art.write_json("gmm", &format!("{name}.json"), &models)?;
    }
    log::info!(
        "exercise {}: {} {} {} separation {:.3}",
        ds.exercise_id,
        summary.reduction,
        cfg.metric,
        cfg.mode,
        separation
    );
    Ok(MetricOutput { records, summary })
}

/// Scoring parameters of one group; `None` is the pooled group.
pub type GroupParams = (Option<u32>, ScoringParams);

/// Scores metric records group by group (one group in between mode, one
/// per subject in within mode).
pub fn score_records(
    records: &[MetricRecord],
    alpha1: f64,
    alpha2: f64,
) -> Result<(Vec<ScoreRecord>, Vec<GroupParams>)> {
    let mut groups: BTreeMap<Option<u32>, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group).or_default().push(r);
    }
    let mut out = Vec::with_capacity(records.len());
    let mut params = Vec::new();
    for (g, recs) in groups {
        let (refs, pats): (Vec<&MetricRecord>, Vec<&MetricRecord>) =
            recs.into_iter().partition(|r| r.label == Correctness::Correct);
        let x: Vec<f64> = refs.iter().map(|r| r.value).collect();
        let y: Vec<f64> = pats.iter().map(|r| r.value).collect();
        let (xs, ys, p) = score_series(&x, &y, alpha1, alpha2)?;
        for (r, s) in refs.iter().zip(xs).chain(pats.iter().zip(ys)) {
            out.push(ScoreRecord {
                repetition: r.repetition.clone(),
                subject: r.subject,
                label: r.label,
                metric: r.value,
                score: s,
            });
        }
        params.push((g, p));
    }
    Ok((out, params))
}

pub fn score_stage(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<Vec<ScoreRecord>> {
    let keys = cfg.keys(fp);
    let path = art.require(
        "metrics",
        &format!("{}.csv", keyed(&ds.exercise_id, &keys.metric)),
        "metric",
    )?;
    let records = read_metric_records(&path)?;
    let (scores, params) = score_records(&records, cfg.alpha1, cfg.alpha2)?;
    let name = keyed(&ds.exercise_id, &keys.score);
    art.ensure_dir("scores")?;
    write_scores(&art.path("scores", &format!("{name}.csv")), &scores)?;
    art.write_json("scores", &format!("{name}.params.json"), &params)?;
    Ok(scores)
}

pub fn load_scores(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<Vec<ScoreRecord>> {
    let keys = cfg.keys(fp);
    let path = art.require(
        "scores",
        &format!("{}.csv", keyed(&ds.exercise_id, &keys.score)),
        "score",
    )?;
    read_scores(&path)
}

/// Pairs every repetition with its score, in dataset order.
pub fn examples(ds: &ExerciseDataset, scores: &[ScoreRecord]) -> Result<Vec<Example>> {
    let by_name: BTreeMap<&str, f64> = scores.iter().map(|s| (s.repetition.as_str(), s.score)).collect();
    ds.all()
        .map(|rep| {
            let target = *by_name
                .get(rep.name.as_str())
                .ok_or_else(|| Error::Dataset(format!("no score for repetition {}; rerun `rehab score`", rep.name)))?;
            Ok(Example {
                name: rep.name.clone(),
                subject: rep.subject_id,
                label: rep.correctness,
                input: rep.values.clone(),
                target,
            })
        })
        .collect()
}

/// Training and validation indices: a stratified random split seeded by
/// the pipeline seed alone, or a held-out subject.
pub fn partition(ds: &ExerciseDataset, cfg: &PipelineConfig) -> Result<Partition> {
    match cfg.holdout_subject {
        Some(s) => leave_one_subject_out(ds, s),
        None => split(ds, cfg.train.split_ratio, cfg.split_seed()),
    }
}

fn pick(all: &[Example], idx: &[usize]) -> Vec<Example> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

/// One prediction of one run, as written to the prediction and
/// residual CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub run: usize,
    pub set: String,
    pub repetition: String,
    pub subject: u32,
    pub label: Correctness,
    pub target: f64,
    pub prediction: f64,
}

impl PredictionRow {
    fn new(run: usize, set: &str, p: &Prediction) -> Self {
        PredictionRow {
            run,
            set: set.to_string(),
            repetition: p.repetition.clone(),
            subject: p.subject,
            label: p.label,
            target: p.target,
            prediction: p.prediction,
        }
    }
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<String> {
    crate::report::to_csv(rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    crate::report::read_csv(path)
}

/// Trains `cfg.train.runs` models and stores checkpoints and reports.
pub fn train_stage(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<TrainReport> {
    let keys = cfg.keys(fp);
    let scores = load_scores(art, ds, fp, cfg)?;
    let all = examples(ds, &scores)?;
    let part = partition(ds, cfg)?;
    let (train_set, val_set) = (pick(&all, &part.train), pick(&all, &part.test));
    log::info!(
        "exercise {}: training {} on {} repetitions, validating on {}",
        ds.exercise_id,
        cfg.model.variant,
        train_set.len(),
        val_set.len()
    );
    let spec = cfg.model.spec(ds);
    let (report, models) = train_runs(&spec, &train_set, &val_set, &cfg.train, cfg.train_seed())?;
    let name = keyed(&ds.exercise_id, &keys.train);
    art.ensure_dir("checkpoints")?;
    for (run, model) in &models {
        model.save(&art.path("checkpoints", &format!("{name}-run{run}.json")))?;
    }
    art.write_json("reports", &format!("{name}-train.json"), &report)?;
    art.write_text("reports", &format!("{name}-loss.csv"), &report.loss_curves_csv())?;
    let mut rows = Vec::new();
    for (run, outcome) in report.runs.iter().enumerate() {
        if let RunOutcome::Completed(r) = outcome {
            for (set, eval) in [("train", Some(&r.train)), ("val", r.val.as_ref())] {
                for p in eval.into_iter().flat_map(|e| &e.predictions) {
                    rows.push(PredictionRow::new(run, set, p));
                }
            }
        }
    }
    art.write_text("reports", &format!("{name}-predictions.csv"), &predictions_csv(&rows)?)?;
    let timing: Vec<f64> = report.completed().map(|r| r.seconds).collect();
    art.write_json("reports", &format!("{name}-timing.json"), &timing)?;
    log::info!(
        "exercise {}: mean MAD {:.5} (standard error {:.5}) over {} runs",
        ds.exercise_id,
        report.mean_mad,
        report.std_error,
        report.completed().count()
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exercise: String,
    pub runs: Vec<usize>,
    pub mad: Vec<f64>,
    pub mean_mad: f64,
    pub validation_size: usize,
}

/// Evaluates stored checkpoints on the validation partition and writes
/// per-repetition residuals.
pub fn eval_stage(art: &Artifacts, ds: &ExerciseDataset, fp: &str, cfg: &PipelineConfig) -> Result<EvalReport> {
    let keys = cfg.keys(fp);
    let scores = load_scores(art, ds, fp, cfg)?;
    let all = examples(ds, &scores)?;
    let part = partition(ds, cfg)?;
    let val_set = pick(&all, &part.test);
    let name = keyed(&ds.exercise_id, &keys.train);
    let mut runs = Vec::new();
    let mut mads = Vec::new();
    let mut rows = Vec::new();
    for run in 0..cfg.train.runs {
        let path = art.path("checkpoints", &format!("{name}-run{run}.json"));
        if !path.is_file() {
            continue;
        }
        let model = AssessModel::load(&path)?;
        let e = evaluate(&model, &val_set)?;
        rows.extend(e.predictions.iter().map(|p| PredictionRow::new(run, "val", p)));
        runs.push(run);
        mads.push(e.mad);
    }
    if runs.is_empty() {
        return Err(Error::MissingArtifact {
            path: art.path("checkpoints", &format!("{name}-run0.json")),
            producer: "train",
        });
    }
    let report = EvalReport {
        exercise: ds.exercise_id.clone(),
        mean_mad: mads.iter().sum::<f64>() / mads.len() as f64,
        runs,
        mad: mads,
        validation_size: val_set.len(),
    };
    art.write_json("reports", &format!("{name}-eval.json"), &report)?;
    art.write_text("reports", &format!("{name}-residuals.csv"), &predictions_csv(&rows)?)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub record: DatasetRecord,
    pub keys: StageKeys,
    pub metric: MetricSummary,
    pub train: TrainReport,
    pub eval: EvalReport,
}

/// Runs reduce, metric, score, train and eval on an ingested dataset.
/// A failing stage is reported by name; artifacts of earlier stages stay
/// on disk.
pub fn run_stages(
    art: &Artifacts,
    ds: &ExerciseDataset,
    fp: &str,
    cfg: &PipelineConfig,
) -> Result<(MetricSummary, TrainReport, EvalReport)> {
    reduce_stage(art, ds, fp, cfg).map_err(|e| e.in_stage("reduce"))?;
    let metric = metric_stage(art, ds, fp, cfg).map_err(|e| e.in_stage("metric"))?;
    score_stage(art, ds, fp, cfg).map_err(|e| e.in_stage("score"))?;
    let train = train_stage(art, ds, fp, cfg).map_err(|e| e.in_stage("train"))?;
    let eval = eval_stage(art, ds, fp, cfg).map_err(|e| e.in_stage("eval"))?;
    Ok((metric.summary, train, eval))
}

/// Ingests `source`, then runs every later stage.
pub fn pipeline(art: &Artifacts, source: &DatasetSource, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let (ds, record) = ingest_stage(art, source).map_err(|e| e.in_stage("ingest"))?;
    let (metric, train, eval) = run_stages(art, &ds, &record.fingerprint, cfg)?;
    Ok(PipelineOutcome {
        keys: cfg.keys(&record.fingerprint),
        record,
        metric,
        train,
        eval,
    })
}

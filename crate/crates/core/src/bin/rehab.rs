//! `rehab`: run pipeline stages against an artifact directory.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rehab::dataset::{Schema, SynthConfig};
use rehab::dimred::AutoencoderConfig;
use rehab::metrics::{metric_table, write_metric_records, GmmConfig, MetricKind, Mode, Reduction, TableOptions};
use rehab::report::{report, ABLATION_JSON, SEPARATION_JSON};
use rehab::scoring::{DEFAULT_ALPHA1, DEFAULT_ALPHA2};
use rehab::seed::derive_seed;
use rehab::trainer::pipeline::{
    eval_stage, examples, ingest_stage, ingested_exercises, load_dataset, load_scores, metric_stage, partition,
    reduce_stage, run_stages, score_stage, train_stage, Artifacts, DatasetSource, ModelTemplate, PipelineConfig,
    ARTIFACT_ENV,
};
use rehab::trainer::{ablation_sweep, AblationTable, TrainConfig, Variant};
use rehab::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(
    name = "rehab",
    version,
    about = "Movement-quality assessment for rehabilitation exercises"
)]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exercise IDs (comma separated); defaults to every ingested exercise.
    #[arg(long, global = true, value_delimiter = ',')]
    exercise: Vec<String>,
    #[arg(long, global = true)]
    reducer: Option<ReducerArg>,
    #[arg(long, global = true)]
    metric: Option<MetricArg>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Artifact root; falls back to $REHAB_ARTIFACTS, then `artifacts`.
    #[arg(long, global = true, env = ARTIFACT_ENV)]
    out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load exercises from a dataset directory.
    Ingest {
        /// Dataset root; overrides `dataset.root`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Schema TOML; overrides `dataset.schema`. Defaults to the UI-PRMD layout.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Generate and ingest synthetic exercises.
    Synth,
    /// Fit the dimensionality reducer.
    Reduce,
    /// Compute per-repetition metric values and the separation degree.
    Metric,
    /// Map metric values to quality scores.
    Score,
    /// Train the assessment model over several seeds.
    Train,
    /// Evaluate stored checkpoints on the validation set.
    Eval,
    /// Render tables and figures from stored artifacts.
    Report,
    /// Run reduce, metric, score, train and eval in sequence.
    Run,
    /// Separation-degree grid over reducers, metrics and modes.
    Table,
    /// Ablation grid over model variants.
    Sweep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReducerArg {
    Raw,
    Mv,
    Pca,
    Ae,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclid,
    Mahal,
    Dtw,
    Gmm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Between,
    Within,
}

/// Configuration file layout. Every section and key is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    seed: u64,
    out: Option<PathBuf>,
    dataset: DatasetSection,
    reduce: ReduceSection,
    metric: MetricSection,
    score: ScoreSection,
    model: ModelTemplate,
    train: TrainConfig,
    split: SplitSection,
    table: TableSection,
    sweep: SweepSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetSection {
    root: Option<PathBuf>,
    schema: Option<PathBuf>,
    /// Exercises to ingest or synthesize when `--exercise` is absent.
    exercises: Vec<String>,
    synthetic: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReduceSection {
    /// `raw`, `mv`, `pca` or `ae`.
    method: String,
    components: usize,
    autoencoder: AutoencoderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MetricSection {
    kind: MetricKind,
    mode: Mode,
    gmm: GmmConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScoreSection {
    alpha1: f64,
    alpha2: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SplitSection {
    /// Validate on this subject instead of a random split.
    holdout_subject: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TableSection {
    reducers: Vec<String>,
    metrics: Vec<MetricKind>,
    modes: Vec<Mode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SweepSection {
    variants: Vec<Variant>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: None,
            schema: None,
            exercises: (1..=10).map(|e| e.to_string()).collect(),
            synthetic: SynthConfig::default(),
        }
    }
}

impl Default for ReduceSection {
    fn default() -> Self {
        ReduceSection {
            method: "ae".into(),
            components: 4,
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

impl Default for MetricSection {
    fn default() -> Self {
        MetricSection {
            kind: MetricKind::Gmm,
            mode: Mode::Between,
            gmm: GmmConfig::default(),
        }
    }
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
        }
    }
}

impl Default for TableSection {
    fn default() -> Self {
        TableSection {
            reducers: ["raw", "mv(3)", "pca(3)", "ae(4)"].map(String::from).to_vec(),
            metrics: MetricKind::ALL.to_vec(),
            modes: Mode::ALL.to_vec(),
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            variants: Variant::ABLATIONS.to_vec(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
    }

    fn apply(&mut self, cli: &Cli) {
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(r) = cli.runs {
            self.train.runs = r;
        }
        if let Some(r) = cli.reducer {
            self.reduce.method = format!("{r:?}").to_lowercase();
        }
        if let Some(m) = cli.metric {
            self.metric.kind = match m {
                MetricArg::Euclid => MetricKind::Euclidean,
                MetricArg::Mahal => MetricKind::Mahalanobis,
                MetricArg::Dtw => MetricKind::Dtw,
                MetricArg::Gmm => MetricKind::Gmm,
            };
        }
        if let Some(m) = cli.mode {
            self.metric.mode = match m {
                ModeArg::Between => Mode::Between,
                ModeArg::Within => Mode::Within,
            };
        }
        if cli.out.is_some() {
            self.out = cli.out.clone();
        }
    }

    /// Parses `name` or `name(n)`; a bare name takes `reduce.components`.
    fn reduction(&self, spec: &str) -> anyhow::Result<Reduction> {
        let spec = spec.trim();
        let (method, m) = match spec.strip_suffix(')').and_then(|s| s.split_once('(')) {
            Some((name, n)) => {
                let n = n
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad code dimension in reducer {spec:?}")))?;
                (name.trim(), n)
            }
            None => (spec, self.reduce.components),
        };
        Ok(match method {
            "raw" => Reduction::Raw,
            "mv" => Reduction::MaxVariance(m),
            "pca" => Reduction::Pca(m),
            "ae" => {
                let mut ae = self.reduce.autoencoder.clone();
                match ae.encoder_units.last_mut() {
                    Some(last) => *last = m,
                    None => ae.encoder_units.push(m),
                }
                Reduction::Autoencoder(ae)
            }
            other => return Err(Error::Config(format!("unknown reducer {other:?} (raw, mv, pca, ae)")).into()),
        })
    }

    fn pipeline(&self) -> anyhow::Result<PipelineConfig> {
        Ok(PipelineConfig {
            reduction: self.reduction(&self.reduce.method)?,
            metric: self.metric.kind,
            mode: self.metric.mode,
            gmm: self.metric.gmm,
            alpha1: self.score.alpha1,
            alpha2: self.score.alpha2,
            model: self.model.clone(),
            train: self.train.clone(),
            holdout_subject: self.split.holdout_subject,
            seed: self.seed,
        })
    }

    fn artifacts(&self) -> Artifacts {
        Artifacts::new(self.out.clone().unwrap_or_else(|| PathBuf::from("artifacts")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind) {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Data) => 2,
        Some(ErrorKind::Numerical) => 3,
        None => 2,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(cli);
    log::info!(
        "resolved configuration:\n{}",
        toml::to_string(&cfg).context("serializing configuration")?
    );
    let art = cfg.artifacts();
    match &cli.command {
        Command::Ingest { data, schema } => cmd_ingest(&art, &cfg, cli, data.as_deref(), schema.as_deref()),
        Command::Synth => cmd_synth(&art, &cfg, cli),
        Command::Reduce => each_exercise(&art, &cfg, cli, |ds, fp, p| reduce_stage(&art, ds, fp, p).map(drop)),
        Command::Metric => each_exercise(&art, &cfg, cli, |ds, fp, p| {
            let out = metric_stage(&art, ds, fp, p)?;
            println!(
                "{}\t{}\t{}\t{}\t{:.3}",
                ds.exercise_id,
                out.summary.reduction,
                p.metric.short_name(),
                p.mode.short_name(),
                out.summary.separation
            );
            Ok(())
        }),
        Command::Score => each_exercise(&art, &cfg, cli, |ds, fp, p| score_stage(&art, ds, fp, p).map(drop)),
        Command::Train => each_exercise(&art, &cfg, cli, |ds, fp, p| {
            let r = train_stage(&art, ds, fp, p)?;
            println!(
                "{}\tmean MAD {:.5}\tstd error {:.5}",
                ds.exercise_id, r.mean_mad, r.std_error
            );
            Ok(())
        }),
        Command::Eval => each_exercise(&art, &cfg, cli, |ds, fp, p| {
            let r = eval_stage(&art, ds, fp, p)?;
            println!(
                "{}\tvalidation MAD {:.5} over {} runs",
                ds.exercise_id,
                r.mean_mad,
                r.runs.len()
            );
            Ok(())
        }),
        Command::Run => each_exercise(&art, &cfg, cli, |ds, fp, p| {
            let (_, _, eval) = run_stages(&art, ds, fp, p)?;
            println!("{}\tvalidation MAD {:.5}", ds.exercise_id, eval.mean_mad);
            Ok(())
        }),
        Command::Report => cmd_report(&art),
        Command::Table => cmd_table(&art, &cfg, cli),
        Command::Sweep => cmd_sweep(&art, &cfg, cli),
    }
}

fn exercises(art: &Artifacts, cli: &Cli) -> anyhow::Result<Vec<String>> {
    if !cli.exercise.is_empty() {
        return Ok(cli.exercise.clone());
    }
    let all = ingested_exercises(art)?;
    if all.is_empty() {
        return Err(Error::MissingArtifact {
            path: art.root.join("dataset"),
            producer: "ingest",
        }
        .into());
    }
    Ok(all)
}

fn each_exercise(
    art: &Artifacts,
    cfg: &RunConfig,
    cli: &Cli,
    f: impl Fn(&rehab::dataset::ExerciseDataset, &str, &PipelineConfig) -> rehab::Result<()>,
) -> anyhow::Result<()> {
    let p = cfg.pipeline()?;
    for ex in exercises(art, cli)? {
        let (ds, record) = load_dataset(art, &ex)?;
        f(&ds, &record.fingerprint, &p).with_context(|| format!("exercise {ex}"))?;
    }
    Ok(())
}

fn cmd_ingest(
    art: &Artifacts,
    cfg: &RunConfig,
    cli: &Cli,
    data: Option<&Path>,
    schema: Option<&Path>,
) -> anyhow::Result<()> {
    let Some(root) = data.or(cfg.dataset.root.as_deref()) else {
        bail!(Error::Config("no dataset root; pass --data or set dataset.root".into()));
    };
    let root = root.canonicalize().map_err(|e| Error::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let base = match schema.or(cfg.dataset.schema.as_deref()) {
        Some(p) => Some(Schema::load(p)?),
        None => None,
    };
    let list = if cli.exercise.is_empty() {
        &cfg.dataset.exercises
    } else {
        &cli.exercise
    };
    for ex in list {
        let schema = match &base {
            Some(s) => Schema {
                exercise: Some(ex.clone()),
                ..s.clone()
            },
            None => Schema::uiprmd(
                ex.parse()
                    .map_err(|_| Error::Config(format!("exercise {ex:?} is not a number")))?,
            ),
        };
        let source = DatasetSource::Directory {
            root: root.clone(),
            schema,
        };
        let (_, rec) = ingest_stage(art, &source).with_context(|| format!("exercise {ex}"))?;
        println!(
            "{}\t{} correct\t{} incorrect\t{}",
            rec.exercise,
            rec.correct,
            rec.incorrect,
            &rec.fingerprint[..12]
        );
    }
    Ok(())
}

fn cmd_synth(art: &Artifacts, cfg: &RunConfig, cli: &Cli) -> anyhow::Result<()> {
    let list = if cli.exercise.is_empty() {
        &cfg.dataset.exercises
    } else {
        &cli.exercise
    };
    for (i, ex) in list.iter().enumerate() {
        let source = DatasetSource::Synthetic {
            config: SynthConfig {
                exercise_id: ex.clone(),
                ..cfg.dataset.synthetic.clone()
            },
            seed: derive_seed(cfg.seed, i as u64),
        };
        let (_, rec) = ingest_stage(art, &source)?;
        println!(
            "{}\t{} correct\t{} incorrect\t{}",
            rec.exercise,
            rec.correct,
            rec.incorrect,
            &rec.fingerprint[..12]
        );
    }
    Ok(())
}

fn cmd_report(art: &Artifacts) -> anyhow::Result<()> {
    let out = report(art)?;
    for p in &out.written {
        println!("{}", p.display());
    }
    if !out.missing.is_empty() {
        log::warn!("no output yet from: {}", out.missing.join(", "));
    }
    Ok(())
}

fn cmd_table(art: &Artifacts, cfg: &RunConfig, cli: &Cli) -> anyhow::Result<()> {
    let mut datasets = Vec::new();
    for ex in exercises(art, cli)? {
        datasets.push(load_dataset(art, &ex)?.0);
    }
    let reducers = match cli.reducer {
        Some(_) => vec![cfg.reduce.method.clone()],
        None => cfg.table.reducers.clone(),
    };
    let reductions = reducers
        .iter()
        .map(|r| cfg.reduction(r))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let metrics = cli.metric.map_or(cfg.table.metrics.clone(), |_| vec![cfg.metric.kind]);
    let modes = cli.mode.map_or(cfg.table.modes.clone(), |_| vec![cfg.metric.mode]);
    let opts = TableOptions {
        gmm: cfg.metric.gmm,
        seed: cfg.seed,
    };
    let table = metric_table(&datasets, &reductions, &metrics, &modes, &opts)?;
    art.write_json("reports", SEPARATION_JSON, &table)?;
    let csv = table.to_csv()?;
    art.write_text("reports", "separation.csv", &csv)?;
    write_metric_records(&art.path("reports", "separation-records.csv"), &table.records)?;
    print!("{csv}");
    Ok(())
}

fn cmd_sweep(art: &Artifacts, cfg: &RunConfig, cli: &Cli) -> anyhow::Result<()> {
    let p = cfg.pipeline()?;
    let mut rows = Vec::new();
    for ex in exercises(art, cli)? {
        let (ds, record) = load_dataset(art, &ex)?;
        let scores = load_scores(art, &ds, &record.fingerprint, &p)?;
        let all = examples(&ds, &scores)?;
        let part = partition(&ds, &p)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
        rows.push(ablation_sweep(
            &ex,
            &pick(&part.train),
            &pick(&part.test),
            &p.model.config(&ds),
            &cfg.sweep.variants,
            &p.train,
            p.train_seed(),
        ));
    }
    let table = AblationTable {
        variants: cfg.sweep.variants.clone(),
        rows,
    };
    art.write_json("reports", ABLATION_JSON, &table)?;
    let csv = table.to_csv();
    art.write_text("reports", "ablation.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

//! Report rendering from stored artifacts: the separation-degree grid,
//! the ablation grid, and per-repetition CSV + SVG figures (scaled metric
//! scatter, metric against score, target against prediction).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::Correctness;
use crate::error::{Error, Result};
use crate::metrics::{read_metric_records, Cell, MetricKind, Mode, SeparationReport, TableRow};
use crate::scoring::read_scores;
use crate::trainer::pipeline::{read_predictions, Artifacts, MetricSummary};
use crate::trainer::AblationTable;

/// Written by `rehab table`.
pub const SEPARATION_JSON: &str = "separation.json";
/// Written by `rehab sweep`.
pub const ABLATION_JSON: &str = "ablation.json";

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Serde(format!("{}: {e}", path.display()))))
        .collect()
}

/// One point of the scaled-metric scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub index: usize,
    pub repetition: String,
    pub label: Correctness,
    pub group: Option<u32>,
    pub scaled: f64,
}

/// One metric value with the score it was mapped to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub repetition: String,
    pub label: Correctness,
    pub metric: f64,
    pub score: f64,
}

/// Target and prediction for one validation repetition of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub run: usize,
    pub index: usize,
    pub repetition: String,
    pub target: f64,
    pub prediction: f64,
}

/// What a report run produced and which producing stages had nothing on
/// disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOutcome {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.to_string_lossy().ends_with(suffix))
        .collect();
    out.sort();
    Ok(out)
}

fn base_name(path: &Path, suffix: &str) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(suffix).unwrap_or(&name).to_string()
}

/// Separation grid assembled from per-exercise metric summaries. Only
/// the raw + mixture combination is marked unsupported; other absent
/// combinations are left out.
pub fn grid_from_summaries(summaries: &[MetricSummary]) -> SeparationReport {
    // (reduction, mode) -> metric -> exercise -> separation; later files win
    let mut grid: BTreeMap<(String, Mode), BTreeMap<MetricKind, BTreeMap<String, f64>>> = BTreeMap::new();
    let mut exercises: Vec<String> = Vec::new();
    for s in summaries {
        grid.entry((s.reduction.clone(), s.mode))
            .or_default()
            .entry(s.metric)
            .or_default()
            .insert(s.exercise.clone(), s.separation);
        if !exercises.contains(&s.exercise) {
            exercises.push(s.exercise.clone());
        }
    }
    let metrics: Vec<MetricKind> = MetricKind::ALL
        .into_iter()
        .filter(|m| {
            summaries.iter().any(|s| s.metric == *m) || (*m == MetricKind::Gmm && grid.keys().any(|(r, _)| r == "raw"))
        })
        .collect();
    let rows = grid
        .into_iter()
        .map(|((reduction, mode), by_metric)| TableRow {
            cells: metrics
                .iter()
                .map(|m| match by_metric.get(m) {
                    Some(vals) => Cell::from_values(vals.values().copied().collect()),
                    None => Cell::Unsupported,
                })
                .collect(),
            reduction,
            mode,
        })
        .collect();
    SeparationReport {
        exercises,
        metrics,
        rows,
        records: Vec::new(),
    }
}

struct Series<'a> {
    name: &'a str,
    color: RGBColor,
    points: Vec<(f64, f64)>,
    line: bool,
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Serde(format!("plot: {e}"))
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |a: f64, b: f64| {
        let m = if b > a { 0.05 * (b - a) } else { 0.5 };
        (a - m, b + m)
    };
    (pad(x0, x1), pad(y0, y1))
}

fn svg_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let ((x0, x1), (y0, y1)) = bounds(series);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for s in series {
        let color = s.color;
        if s.line {
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        } else {
            chart
                .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?
                .label(s.name)
                .legend(move |(x, y)| Circle::new((x + 10, y), 3, color.filled()));
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

const CORRECT: RGBColor = RGBColor(31, 119, 180);
const INCORRECT: RGBColor = RGBColor(214, 39, 40);

fn by_label<T>(
    items: &[T],
    label: impl Fn(&T) -> Correctness,
    point: impl Fn(&T) -> (f64, f64),
) -> Vec<Series<'static>> {
    [
        ("correct", Correctness::Correct, CORRECT),
        ("incorrect", Correctness::Incorrect, INCORRECT),
    ]
    .into_iter()
    .map(|(name, l, color)| Series {
        name,
        color,
        points: items.iter().filter(|i| label(i) == l).map(&point).collect(),
        line: false,
    })
    .collect()
}

fn render_scatters(art: &Artifacts, out: &mut ReportOutcome) -> Result<bool> {
    let files = files_with_suffix(&art.root.join("metrics"), ".csv")?;
    for f in &files {
        let records = read_metric_records(f)?;
        let points: Vec<ScatterPoint> = records
            .iter()
            .enumerate()
            .map(|(index, r)| ScatterPoint {
                index,
                repetition: r.repetition.clone(),
                label: r.label,
                group: r.group,
                scaled: r.scaled,
            })
            .collect();
        let name = base_name(f, ".csv");
        out.written
            .push(art.write_text("reports", &format!("scatter-{name}.csv"), &to_csv(&points)?)?);
        let title = records
            .first()
            .map(|r| format!("Exercise {}: {} {} ({})", r.exercise, r.metric, r.reduction, r.mode))
            .unwrap_or_default();
        let svg = art.path("reports", &format!("scatter-{name}.svg"));
        svg_plot(
            &svg,
            &title,
            "repetition",
            "scaled metric",
            &by_label(&points, |p| p.label, |p| (p.index as f64, p.scaled)),
        )?;
        out.written.push(svg);
    }
    Ok(!files.is_empty())
}

fn render_scores(art: &Artifacts, out: &mut ReportOutcome) -> Result<bool> {
    let files = files_with_suffix(&art.root.join("scores"), ".csv")?;
    for f in &files {
        let points: Vec<ScorePoint> = read_scores(f)?
            .into_iter()
            .map(|s| ScorePoint {
                repetition: s.repetition,
                label: s.label,
                metric: s.metric,
                score: s.score,
            })
            .collect();
        let name = base_name(f, ".csv");
        out.written
            .push(art.write_text("reports", &format!("score-{name}.csv"), &to_csv(&points)?)?);
        let svg = art.path("reports", &format!("score-{name}.svg"));
        svg_plot(
            &svg,
            "Metric value and quality score",
            "metric",
            "score",
            &by_label(&points, |p| p.label, |p| (p.metric, p.score)),
        )?;
        out.written.push(svg);
    }
    Ok(!files.is_empty())
}

/// Validation targets sorted ascending with each run's predictions.
pub fn prediction_curves(rows: &[crate::trainer::pipeline::PredictionRow]) -> Vec<CurvePoint> {
    let mut runs: BTreeMap<usize, Vec<&crate::trainer::pipeline::PredictionRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.set == "val") {
        runs.entry(r.run).or_default().push(r);
    }
    let mut out = Vec::new();
    for (run, mut rs) in runs {
        rs.sort_by(|a, b| {
            a.target
                .total_cmp(&b.target)
                .then_with(|| a.repetition.cmp(&b.repetition))
        });
        out.extend(rs.into_iter().enumerate().map(|(index, r)| CurvePoint {
            run,
            index,
            repetition: r.repetition.clone(),
            target: r.target,
            prediction: r.prediction,
        }));
    }
    out
}

fn render_predictions(art: &Artifacts, out: &mut ReportOutcome) -> Result<bool> {
    let files = files_with_suffix(&art.root.join("reports"), "-residuals.csv")?;
    for f in &files {
        let curves = prediction_curves(&read_predictions(f)?);
        let name = base_name(f, "-residuals.csv");
        out.written
            .push(art.write_text("reports", &format!("prediction-{name}.csv"), &to_csv(&curves)?)?);
        let first = curves.first().map_or(0, |c| c.run);
        let run0: Vec<&CurvePoint> = curves.iter().filter(|c| c.run == first).collect();
        let svg = art.path("reports", &format!("prediction-{name}.svg"));
        svg_plot(
            &svg,
            &format!("Validation targets and predictions (run {first})"),
            "validation repetition (sorted by target)",
            "quality score",
            &[
                Series {
                    name: "target",
                    color: CORRECT,
                    points: run0.iter().map(|c| (c.index as f64, c.target)).collect(),
                    line: true,
                },
                Series {
                    name: "prediction",
                    color: INCORRECT,
                    points: run0.iter().map(|c| (c.index as f64, c.prediction)).collect(),
                    line: true,
                },
            ],
        )?;
        out.written.push(svg);
    }
    Ok(!files.is_empty())
}

fn render_separation(art: &Artifacts, out: &mut ReportOutcome) -> Result<bool> {
    let table_path = art.path("reports", SEPARATION_JSON);
    let report = if table_path.is_file() {
        art.read_json::<SeparationReport>("reports", SEPARATION_JSON, "table")?
    } else {
        let mut summaries = Vec::new();
        for f in files_with_suffix(&art.root.join("metrics"), ".json")? {
            let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            summaries.push(serde_json::from_str::<MetricSummary>(&text)?);
        }
        if summaries.is_empty() {
            return Ok(false);
        }
        grid_from_summaries(&summaries)
    };
    out.written
        .push(art.write_text("reports", "table-separation.csv", &report.to_csv()?)?);
    Ok(true)
}

fn render_ablation(art: &Artifacts, out: &mut ReportOutcome) -> Result<bool> {
    if !art.path("reports", ABLATION_JSON).is_file() {
        return Ok(false);
    }
    let table: AblationTable = art.read_json("reports", ABLATION_JSON, "sweep")?;
    out.written
        .push(art.write_text("reports", "table-ablation.csv", &table.to_csv())?);
    Ok(true)
}

type Renderer = fn(&Artifacts, &mut ReportOutcome) -> Result<bool>;

/// Renders everything the artifact root supports. Stages with no output
/// are listed in [`ReportOutcome::missing`]; if nothing at all can be
/// rendered the result is [`Error::MissingStages`].
pub fn report(art: &Artifacts) -> Result<ReportOutcome> {
    let mut out = ReportOutcome::default();
    let mut any = false;
    let steps: [(&str, Renderer); 5] = [
        ("metric", render_scatters),
        ("score", render_scores),
        ("eval", render_predictions),
        ("table", render_separation),
        ("sweep", render_ablation),
    ];
    for (stage, step) in steps {
        if step(art, &mut out)? {
            any = true;
        } else {
            out.missing.push(stage.to_string());
        }
    }
    if !any {
        let mut stages = vec!["ingest".to_string()];
        stages.extend(out.missing);
        return Err(Error::MissingStages(stages));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(ex: &str, reduction: &str, metric: MetricKind, mode: Mode, s: f64) -> MetricSummary {
        MetricSummary {
            exercise: ex.into(),
            reduction: reduction.into(),
            metric,
            mode,
            separation: s,
            per_group: vec![(None, s)],
        }
    }

    #[test]
    fn empty_root_lists_missing_stages() {
        let dir = tempfile::tempdir().unwrap();
        match report(&Artifacts::new(dir.path())) {
            Err(Error::MissingStages(s)) => {
                assert_eq!(s, ["ingest", "metric", "score", "eval", "table", "sweep"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_aggregates_over_exercises() {
        let g = grid_from_summaries(&[
            summary("1", "raw", MetricKind::Euclidean, Mode::Between, 0.2),
            summary("2", "raw", MetricKind::Euclidean, Mode::Between, 0.4),
            summary("1", "pca(4)", MetricKind::Gmm, Mode::Between, 0.5),
        ]);
        let csv = g.to_csv().unwrap();
        assert!(csv.contains("raw,between,0.300 (0.141),--"), "{csv}");
        assert!(csv.contains("pca(4),between,--,0.500 (0.000)"), "{csv}");
    }

    #[test]
    fn curves_sort_by_target() {
        use crate::trainer::pipeline::PredictionRow;
        let row = |name: &str, t, p| PredictionRow {
            run: 0,
            set: "val".into(),
            repetition: name.into(),
            subject: 1,
            label: Correctness::Correct,
            target: t,
            prediction: p,
        };
        let c = prediction_curves(&[row("a", 0.9, 0.8), row("b", 0.1, 0.2)]);
        assert_eq!(c[0].repetition, "b");
        assert_eq!(c[1].index, 1);
    }

    #[test]
    fn csv_round_trip() {
        let pts = vec![ScatterPoint {
            index: 0,
            repetition: "s01_e01_r01".into(),
            label: Correctness::Incorrect,
            group: None,
            scaled: 3.25,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, to_csv(&pts).unwrap()).unwrap();
        assert_eq!(read_csv::<ScatterPoint>(&p).unwrap(), pts);
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BodyPartMap, Correctness, ExerciseDataset, Repetition, DEFAULT_CANONICAL_T};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Auto,
    Comma,
    Whitespace,
}

/// Dataset layout descriptor, normally read from a TOML file.
///
/// ```toml
/// exercise = "1"
/// dims = 117
/// canonical_t = 240
/// correct_dir = "Segmented Movements/Vicon/Angles"
/// incorrect_dir = "Incorrect Segmented Movements/Vicon/Angles"
/// file_pattern = '^m(?P<exercise>\d+)_s(?P<subject>\d+)_e(?P<repetition>\d+)'
/// exclude = ["m01_s03_e04_angles.txt"]
///
/// [body_parts]
/// left_arm = "22-45"
/// # ...
/// ```
///
/// With `segments` set, repetitions are cut out of longer recordings using
/// an index CSV with columns `file,first,last,subject,label[,exercise]`
/// (one-based inclusive frame numbers, paths relative to the dataset root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    /// Exercise to keep; compared against the `exercise` capture group.
    #[serde(default)]
    pub exercise: Option<String>,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_canonical_t")]
    pub canonical_t: usize,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default = "default_correct_dir")]
    pub correct_dir: String,
    #[serde(default = "default_incorrect_dir")]
    pub incorrect_dir: String,
    #[serde(default = "default_pattern")]
    pub file_pattern: String,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub segments: Option<String>,
    #[serde(default)]
    pub body_parts: Option<BodyPartMap>,
}

fn default_dims() -> usize {
    super::UIPRMD_DIMS
}
fn default_canonical_t() -> usize {
    DEFAULT_CANONICAL_T
}
fn default_correct_dir() -> String {
    "correct".into()
}
fn default_incorrect_dir() -> String {
    "incorrect".into()
}
fn default_pattern() -> String {
    r"^m(?P<exercise>\d+)_s(?P<subject>\d+)_e(?P<repetition>\d+)".into()
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            exercise: None,
            dims: default_dims(),
            canonical_t: default_canonical_t(),
            delimiter: Delimiter::Auto,
            correct_dir: default_correct_dir(),
            incorrect_dir: default_incorrect_dir(),
            file_pattern: default_pattern(),
            exclude: Vec::new(),
            segments: None,
            body_parts: None,
        }
    }
}

impl Schema {
    /// Layout of the public UI-PRMD release (Vicon joint angles).
    pub fn uiprmd(exercise: u32) -> Self {
        Schema {
            exercise: Some(exercise.to_string()),
            correct_dir: "Segmented Movements/Vicon/Angles".into(),
            incorrect_dir: "Incorrect Segmented Movements/Vicon/Angles".into(),
            ..Schema::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn body_part_map(&self) -> Result<BodyPartMap> {
        let map = match &self.body_parts {
            Some(m) => m.clone(),
            None if self.dims == super::UIPRMD_DIMS => BodyPartMap::uiprmd(),
            None => BodyPartMap::contiguous(self.dims)?,
        };
        if map.dims() != self.dims {
            return Err(Error::Schema(format!(
                "body-part map covers {} dimensions, schema declares {}",
                map.dims(),
                self.dims
            )));
        }
        Ok(map)
    }
}

/// Normalises exercise identifiers so `E1`, `e01`, `m01` and `1` compare equal.
pub(crate) fn normalize_exercise(id: &str) -> String {
    let trimmed = id.trim().trim_start_matches(['E', 'e', 'M', 'm']);
    match trimmed.parse::<u64>() {
        Ok(n) => n.to_string(),
        Err(_) => id.trim().to_string(),
    }
}

/// Parses a numeric text matrix: one frame per line, cells separated by
/// commas or whitespace. Blank lines are skipped.
pub fn parse_matrix(text: &str, delimiter: Delimiter, file: &Path) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let comma = match delimiter {
            Delimiter::Comma => true,
            Delimiter::Whitespace => false,
            Delimiter::Auto => line.contains(','),
        };
        let cells: Box<dyn Iterator<Item = &str>> = if comma {
            Box::new(line.split(',').map(str::trim))
        } else {
            Box::new(line.split_whitespace())
        };
        let mut count = 0;
        for (col, cell) in cells.enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                file: file.to_path_buf(),
                row: line_no + 1,
                col: col + 1,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    file: file.to_path_buf(),
                    row: line_no + 1,
                    col: col + 1,
                    cell: cell.to_string(),
                });
            }
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::Schema(format!(
                    "{}: row {} has {count} columns, expected {c}",
                    file.display(),
                    line_no + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))
}

/// Inverse of [`parse_matrix`]: comma-separated, shortest round-trip
/// decimal representation.
pub fn format_matrix(values: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

struct Source {
    path: PathBuf,
    name: String,
    subject: u32,
    exercise: String,
    correctness: Correctness,
    rows: Option<(usize, usize)>,
}

/// Loads every repetition described by `schema` below `root`, resamples
/// them to the canonical length and validates the result.
pub fn ingest(root: &Path, schema: &Schema) -> Result<ExerciseDataset> {
    let body_parts = schema.body_part_map()?;
    let sources = match &schema.segments {
        Some(index) => segment_sources(root, &root.join(index), schema)?,
        None => file_sources(root, schema)?,
    };

    let reps: Vec<Repetition> = sources
        .par_iter()
        .map(|src| load_source(src, schema))
        .collect::<Result<_>>()?;

    let exercise_id = match &schema.exercise {
        Some(e) => normalize_exercise(e),
        None => {
            let mut ids: Vec<_> = reps.iter().map(|r| r.exercise_id.clone()).collect();
            ids.sort();
            ids.dedup();
            match ids.as_slice() {
                [one] => one.clone(),
                [] => String::new(),
                _ => {
                    return Err(Error::Schema(format!(
                        "files span several exercises ({}); set `exercise` in the schema",
                        ids.join(", ")
                    )))
                }
            }
        }
    };

    let (reference, patient): (Vec<_>, Vec<_>) = reps
        .into_iter()
        .filter(|r| r.correctness != Correctness::Unlabeled)
        .partition(|r| r.correctness == Correctness::Correct);
    if reference.is_empty() {
        return Err(Error::Dataset(format!(
            "no reference repetitions found for exercise {exercise_id} under {}",
            root.join(&schema.correct_dir).display()
        )));
    }
    ExerciseDataset::new(exercise_id, reference, patient, schema.canonical_t, body_parts)
}

fn file_sources(root: &Path, schema: &Schema) -> Result<Vec<Source>> {
    let pattern = Regex::new(&schema.file_pattern).map_err(|e| Error::Schema(format!("file_pattern: {e}")))?;
    let wanted = schema.exercise.as_deref().map(normalize_exercise);
    let mut out = Vec::new();
    for (dir, correctness) in [
        (&schema.correct_dir, Correctness::Correct),
        (&schema.incorrect_dir, Correctness::Incorrect),
    ] {
        let dir = root.join(dir);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for path in files {
            let file_name = path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if schema.exclude.iter().any(|x| x == &file_name) {
                continue;
            }
            let Some(caps) = pattern.captures(&file_name) else {
                continue;
            };
            let exercise = caps
                .name("exercise")
                .map(|m| normalize_exercise(m.as_str()))
                .unwrap_or_default();
            if let Some(w) = &wanted {
                if caps.name("exercise").is_some() && &exercise != w {
                    continue;
                }
            }
            let subject = caps
                .name("subject")
                .ok_or_else(|| Error::Schema("file_pattern lacks a `subject` group".into()))?
                .as_str()
                .parse::<u32>()
                .map_err(|e| Error::Schema(format!("{file_name}: subject id: {e}")))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(file_name);
            out.push(Source {
                path,
                name,
                subject,
                exercise: wanted.clone().unwrap_or(exercise),
                correctness,
                rows: None,
            });
        }
    }
    Ok(out)
}

fn segment_sources(root: &Path, index: &Path, schema: &Schema) -> Result<Vec<Source>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(index)
        .map_err(|e| Error::Schema(format!("{}: {e}", index.display())))?;
    let wanted = schema.exercise.as_deref().map(normalize_exercise);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("{}: {e}", index.display())))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let bad = |what: &str| Error::Schema(format!("{}: record {}: bad {what}", index.display(), i + 1));
        let file = field(0).to_string();
        if schema.exclude.iter().any(|x| x == &file) {
            continue;
        }
        let first: usize = field(1).parse().map_err(|_| bad("first frame"))?;
        let last: usize = field(2).parse().map_err(|_| bad("last frame"))?;
        if first == 0 || last < first {
            return Err(bad("frame range"));
        }
        let subject: u32 = field(3).parse().map_err(|_| bad("subject"))?;
        let correctness = Correctness::parse(field(4)).ok_or_else(|| bad("label"))?;
        let exercise = normalize_exercise(field(5));
        if let Some(w) = &wanted {
            if !field(5).is_empty() && &exercise != w {
                continue;
            }
        }
        out.push(Source {
            path: root.join(&file),
            name: format!("{file}#{first}-{last}"),
            subject,
            exercise: wanted.clone().unwrap_or(exercise),
            correctness,
            rows: Some((first - 1, last)),
        });
    }
    Ok(out)
}

fn load_source(src: &Source, schema: &Schema) -> Result<Repetition> {
    let text = fs::read_to_string(&src.path).map_err(|e| Error::io(&src.path, e))?;
    let mut values = parse_matrix(&text, schema.delimiter, &src.path)?;
    if let Some((start, end)) = src.rows {
        if end > values.nrows() {
            return Err(Error::Schema(format!(
                "{}: segment ends at frame {end}, file has {}",
                src.path.display(),
                values.nrows()
            )));
        }
        values = values.slice(ndarray::s![start..end, ..]).to_owned();
    }
    if values.ncols() != schema.dims {
        return Err(Error::Schema(format!(
            "{}: {} columns, schema declares {}",
            src.path.display(),
            values.ncols(),
            schema.dims
        )));
    }
    let rep = Repetition {
        name: src.name.clone(),
        source_length: values.nrows(),
        values,
        subject_id: src.subject,
        exercise_id: src.exercise.clone(),
        correctness: src.correctness,
    };
    rep.resample(schema.canonical_t)
}

/// One row of the normalised dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub name: String,
    pub subject: u32,
    pub exercise: String,
    pub label: Correctness,
    pub t_source: usize,
}

pub fn write_manifest(ds: &ExerciseDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for rep in ds.all() {
        w.serialize(ManifestRecord {
            name: rep.name.clone(),
            subject: rep.subject_id,
            exercise: rep.exercise_id.clone(),
            label: rep.correctness,
            t_source: rep.source_length,
        })
        .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Writes a dataset back out in the default schema layout
/// (`correct/`, `incorrect/`, `m<ex>_s<subject>_e<rep>.txt`).
pub fn write_layout(ds: &ExerciseDataset, root: &Path) -> Result<Schema> {
    let mut counters: BTreeMap<(Correctness, u32), usize> = BTreeMap::new();
    let exercise: u32 = ds.exercise_id.parse().unwrap_or(1);
    for (dir, reps) in [("correct", &ds.reference), ("incorrect", &ds.patient)] {
        let dir = root.join(dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for rep in reps {
            let n = counters.entry((rep.correctness, rep.subject_id)).or_insert(0);
            *n += 1;
            let path = dir.join(format!("m{exercise:02}_s{:02}_e{:02}.txt", rep.subject_id, n));
            fs::write(&path, format_matrix(&rep.values)).map_err(|e| Error::io(&path, e))?;
        }
    }
    let schema = Schema {
        exercise: Some(exercise.to_string()),
        dims: ds.dims(),
        canonical_t: ds.canonical_t,
        body_parts: Some(ds.body_parts.clone()),
        ..Schema::default()
    };
    let path = root.join("schema.toml");
    fs::write(&path, schema.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_file_parses() {
        let line = vec!["0"; 117].join(" ");
        let text = format!("{line}\n{line}\n{line}\n");
        let m = parse_matrix(&text, Delimiter::Auto, Path::new("z.txt")).unwrap();
        assert_eq!(m.dim(), (3, 117));
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = parse_matrix("1,2,3\n4,x5,6\n", Delimiter::Auto, Path::new("f.csv")).unwrap_err();
        match err {
            Error::Parse { row, col, cell, .. } => {
                assert_eq!((row, col, cell.as_str()), (2, 2, "x5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_cell_rejected() {
        assert!(parse_matrix("1 NaN\n", Delimiter::Auto, Path::new("f")).is_err());
    }

    #[test]
    fn ragged_rows_are_schema_errors() {
        let err = parse_matrix("1 2\n3\n", Delimiter::Whitespace, Path::new("f")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn exercise_ids_normalise() {
        assert_eq!(normalize_exercise("E1"), "1");
        assert_eq!(normalize_exercise("01"), "1");
        assert_eq!(normalize_exercise("m10"), "10");
        assert_eq!(normalize_exercise("squat"), "squat");
    }

    #[test]
    fn schema_rejects_unknown_keys() {
        assert!(toml::from_str::<Schema>("dims = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = Schema {
            dims: 10,
            body_parts: Some(BodyPartMap::contiguous(10).unwrap()),
            ..Schema::uiprmd(2)
        };
        let back: Schema = toml::from_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }
}

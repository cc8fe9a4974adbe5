//! Repetitions, exercise datasets and the operations that prepare them:
//! ingestion from text matrices, length normalisation, partitioning and a
//! synthetic generator for desk-scale experiments.

mod bodyparts;
mod ingest;
mod split;
mod synth;

pub use bodyparts::{BodyPart, BodyPartMap};
pub use ingest::{
    format_matrix, ingest, parse_matrix, read_manifest, write_layout, write_manifest, Delimiter, ManifestRecord, Schema,
};
pub use split::{leave_one_subject_out, split, Partition};
pub use synth::{synthesize, SynthConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical number of frames every repetition is resampled to.
pub const DEFAULT_CANONICAL_T: usize = 240;

/// Frame dimension of the UI-PRMD angle files (39 joint-angle triplets).
pub const UIPRMD_DIMS: usize = 117;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correctness {
    Correct,
    Incorrect,
    Unlabeled,
}

impl Correctness {
    pub fn as_str(self) -> &'static str {
        match self {
            Correctness::Correct => "correct",
            Correctness::Incorrect => "incorrect",
            Correctness::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" => Some(Correctness::Correct),
            "incorrect" => Some(Correctness::Incorrect),
            "unlabeled" => Some(Correctness::Unlabeled),
            _ => None,
        }
    }
}

/// One exercise repetition: rows are frames, columns are joint-angle
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    /// Stable identifier, usually the source file stem.
    pub name: String,
    pub values: Array2<f64>,
    pub subject_id: u32,
    pub exercise_id: String,
    pub correctness: Correctness,
    /// Frame count before resampling.
    pub source_length: usize,
}

impl Repetition {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    /// Linearly interpolates every dimension onto a uniform grid of
    /// `target` frames. Both endpoints are reproduced exactly.
    pub fn resample(&self, target: usize) -> Result<Repetition> {
        let values = resample_matrix(&self.values, target).map_err(|e| match e {
            Error::DegenerateRepetition(msg) => Error::DegenerateRepetition(format!("{}: {msg}", self.name)),
            other => other,
        })?;
        Ok(Repetition { values, ..self.clone() })
    }
}

/// Per-column linear interpolation of a frame matrix to `target` rows.
pub fn resample_matrix(values: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
    let source = values.nrows();
    if source < 2 {
        return Err(Error::DegenerateRepetition(format!(
            "{source} frame(s); at least 2 are needed to resample"
        )));
    }
    if target < 2 {
        return Err(Error::Config(format!("resample target {target} < 2")));
    }
    if source == target {
        return Ok(values.clone());
    }
    let dims = values.ncols();
    let mut out = Array2::zeros((target, dims));
    let step = (source - 1) as f64 / (target - 1) as f64;
    for j in 0..target {
        if j == target - 1 {
            out.row_mut(j).assign(&values.row(source - 1));
            continue;
        }
        let pos = j as f64 * step;
        let lo = (pos.floor() as usize).min(source - 2);
        let frac = pos - lo as f64;
        for d in 0..dims {
            let a = values[[lo, d]];
            let b = values[[lo + 1, d]];
            out[[j, d]] = if frac == 0.0 { a } else { a + frac * (b - a) };
        }
    }
    Ok(out)
}

/// All repetitions of one exercise, split into reference (correct) and
/// patient (incorrect) movements.
#[derive(Debug, Clone)]
pub struct ExerciseDataset {
    pub exercise_id: String,
    pub reference: Vec<Repetition>,
    pub patient: Vec<Repetition>,
    pub canonical_t: usize,
    pub body_parts: BodyPartMap,
}

impl ExerciseDataset {
    /// Builds a dataset and checks the shared-shape invariants.
    pub fn new(
        exercise_id: impl Into<String>,
        reference: Vec<Repetition>,
        patient: Vec<Repetition>,
        canonical_t: usize,
        body_parts: BodyPartMap,
    ) -> Result<Self> {
        let ds = ExerciseDataset {
            exercise_id: exercise_id.into(),
            reference,
            patient,
            canonical_t,
            body_parts,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reference.is_empty() {
            return Err(Error::Dataset(format!(
                "exercise {}: reference set is empty",
                self.exercise_id
            )));
        }
        if !self.canonical_t.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "canonical T {} is not divisible by 8",
                self.canonical_t
            )));
        }
        let dims = self.body_parts.dims();
        for rep in self.all() {
            if rep.frames() != self.canonical_t {
                return Err(Error::Dataset(format!(
                    "{}: {} frames, expected {}",
                    rep.name,
                    rep.frames(),
                    self.canonical_t
                )));
            }
            if rep.dims() != dims {
                return Err(Error::Schema(format!(
                    "{}: {} dimensions, expected {dims}",
                    rep.name,
                    rep.dims()
                )));
            }
            if let Some(pos) = rep.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "{}: non-finite value at frame {}, dimension {}",
                    rep.name,
                    pos / dims,
                    pos % dims
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.body_parts.dims()
    }

    /// Reference repetitions followed by patient repetitions. Indices used
    /// by [`Partition`] refer to this order.
    pub fn all(&self) -> impl Iterator<Item = &Repetition> + Clone {
        self.reference.iter().chain(self.patient.iter())
    }

    pub fn len(&self) -> usize {
        self.reference.len() + self.patient.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<&Repetition> {
        if index < self.reference.len() {
            self.reference.get(index)
        } else {
            self.patient.get(index - self.reference.len())
        }
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Repetition> {
        indices.iter().filter_map(|&i| self.get(i)).collect()
    }

    /// Sorted, de-duplicated subject identifiers.
    pub fn subjects(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.all().map(|r| r.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Restricts the dataset to one subject's repetitions.
    pub fn for_subject(&self, subject: u32) -> Result<ExerciseDataset> {
        let reference: Vec<_> = self
            .reference
            .iter()
            .filter(|r| r.subject_id == subject)
            .cloned()
            .collect();
        let patient: Vec<_> = self
            .patient
            .iter()
            .filter(|r| r.subject_id == subject)
            .cloned()
            .collect();
        if reference.is_empty() && patient.is_empty() {
            return Err(Error::UnknownSubject(subject));
        }
        ExerciseDataset::new(
            self.exercise_id.clone(),
            reference,
            patient,
            self.canonical_t,
            self.body_parts.clone(),
        )
    }
}

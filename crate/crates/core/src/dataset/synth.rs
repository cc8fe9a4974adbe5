use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BodyPart, BodyPartMap, Correctness, ExerciseDataset, Repetition};
use crate::error::{Error, Result};

/// Parameters of the synthetic exercise generator.
///
/// Every dimension follows a sum of three sinusoids around a random offset.
/// Subjects add a small constant offset and gain. Correct repetitions add
/// white noise; incorrect ones additionally carry a mid-repetition offset on
/// the left-leg dimensions and a mild time warp, both scaled by
/// `perturbation` times a per-repetition severity in `[0.5, 1.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub exercise_id: String,
    pub dims: usize,
    pub frames: usize,
    pub subjects: u32,
    pub reps_per_subject: usize,
    /// Standard deviation of per-frame noise, in degrees.
    pub noise: f64,
    pub perturbation: f64,
    /// Relative spread of source lengths before resampling.
    pub length_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            exercise_id: "1".into(),
            dims: 15,
            frames: 32,
            subjects: 4,
            reps_per_subject: 5,
            noise: 1.0,
            perturbation: 1.0,
            length_jitter: 0.2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.dims < 5 {
            return Err(Error::Config(format!("synthetic dims {} < 5", self.dims)));
        }
        if self.frames == 0 || !self.frames.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "synthetic frames {} must be a positive multiple of 8",
                self.frames
            )));
        }
        if self.subjects == 0 || self.reps_per_subject == 0 {
            return Err(Error::Config(
                "synthetic subject and repetition counts must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.perturbation >= 0.0 && (0.0..0.9).contains(&self.length_jitter)) {
            return Err(Error::Config(
                "noise, perturbation must be >= 0 and length_jitter in [0, 0.9)".into(),
            ));
        }
        Ok(())
    }
}

struct Trajectory {
    offset: Vec<f64>,
    // (amplitude, frequency, phase) per dimension, three components each
    components: Vec<[(f64, f64, f64); 3]>,
}

impl Trajectory {
    fn value(&self, d: usize, u: f64) -> f64 {
        self.offset[d]
            + self.components[d]
                .iter()
                .map(|&(a, f, p)| a * (TAU * f * u + p).sin())
                .sum::<f64>()
    }
}

pub fn synthesize(config: &SynthConfig, seed: u64) -> Result<ExerciseDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body_parts = BodyPartMap::contiguous(config.dims)?;
    let affected: Vec<bool> = {
        let mut v = vec![false; config.dims];
        for &i in body_parts.group(BodyPart::LeftLeg) {
            v[i] = true;
        }
        v
    };

    let traj = Trajectory {
        offset: (0..config.dims).map(|_| rng.gen_range(-30.0..30.0)).collect(),
        components: (0..config.dims)
            .map(|_| {
                std::array::from_fn(|k| {
                    let k = (k + 1) as f64;
                    (rng.gen_range(2.0..15.0) / k, 0.5 * k, rng.gen_range(0.0..TAU))
                })
            })
            .collect(),
    };
    let subject_shift = Normal::new(0.0, 2.0).expect("valid normal");
    let noise = Normal::new(0.0, config.noise.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut reference = Vec::new();
    let mut patient = Vec::new();
    for subject in 1..=config.subjects {
        let shift: Vec<f64> = (0..config.dims).map(|_| subject_shift.sample(&mut rng)).collect();
        let gain = rng.gen_range(0.9..1.1);
        for correctness in [Correctness::Correct, Correctness::Incorrect] {
            for k in 1..=config.reps_per_subject {
                let jitter = rng.gen_range(-config.length_jitter..=config.length_jitter);
                let len = ((config.frames as f64 * (1.0 + jitter)).round() as usize).max(2);
                let severity = match correctness {
                    Correctness::Incorrect => config.perturbation * rng.gen_range(0.5..1.5),
                    _ => 0.0,
                };
                let mut values = Array2::zeros((len, config.dims));
                for t in 0..len {
                    let u = t as f64 / (len - 1) as f64;
                    let bump = (PI * u).sin();
                    let warped = (u + 0.05 * severity * bump).clamp(0.0, 1.0);
                    for d in 0..config.dims {
                        let mut v = shift[d] + gain * traj.value(d, warped);
                        if affected[d] {
                            v += 6.0 * severity * bump;
                        }
                        if config.noise > 0.0 {
                            v += noise.sample(&mut rng);
                        }
                        values[[t, d]] = v;
                    }
                }
                let rep = Repetition {
                    name: format!(
                        "m{:02}_s{subject:02}_e{k:02}_{}",
                        config.exercise_id,
                        correctness.as_str()
                    ),
                    source_length: len,
                    values,
                    subject_id: subject,
                    exercise_id: config.exercise_id.clone(),
                    correctness,
                }
                .resample(config.frames)?;
                match correctness {
                    Correctness::Correct => reference.push(rep),
                    _ => patient.push(rep),
                }
            }
        }
    }
    ExerciseDataset::new(
        config.exercise_id.clone(),
        reference,
        patient,
        config.frames,
        body_parts,
    )
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExerciseDataset;
use crate::error::{Error, Result};

/// Disjoint index sets into [`ExerciseDataset::all`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random split. Each class contributes `floor(n * ratio)`
/// repetitions to the training side (at least one to each side), so class
/// proportions match within one repetition.
pub fn split(ds: &ExerciseDataset, ratio: f64, seed: u64) -> Result<Partition> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n_ref = ds.reference.len();
    let n_pat = ds.patient.len();
    if n_ref < 2 || n_pat < 2 {
        return Err(Error::Split(format!(
            "need at least 2 repetitions per class, have {n_ref} correct / {n_pat} incorrect"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (offset, n) in [(0, n_ref), (n_ref, n_pat)] {
        let mut idx: Vec<usize> = (offset..offset + n).collect();
        idx.shuffle(&mut rng);
        let n_train = ((n as f64 * ratio).floor() as usize).clamp(1, n - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Partition { train, test })
}

/// Holds out every repetition of `subject`.
pub fn leave_one_subject_out(ds: &ExerciseDataset, subject: u32) -> Result<Partition> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.get(i).map(|r| r.subject_id) == Some(subject));
    if test.is_empty() {
        return Err(Error::UnknownSubject(subject));
    }
    if train.is_empty() {
        return Err(Error::Split(format!(
            "subject {subject} is the only subject; nothing left to train on"
        )));
    }
    Ok(Partition { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BodyPartMap, Correctness, Repetition};
    use ndarray::Array2;

    fn dataset(subjects: u32, per_subject: usize) -> ExerciseDataset {
        let mk = |s: u32, k: usize, c: Correctness| Repetition {
            name: format!("{}_{s}_{k}", c.as_str()),
            values: Array2::zeros((8, 5)),
            subject_id: s,
            exercise_id: "1".into(),
            correctness: c,
            source_length: 8,
        };
        let mut reference = Vec::new();
        let mut patient = Vec::new();
        for s in 1..=subjects {
            for k in 0..per_subject {
                reference.push(mk(s, k, Correctness::Correct));
                patient.push(mk(s, k, Correctness::Incorrect));
            }
        }
        ExerciseDataset::new("1", reference, patient, 8, BodyPartMap::contiguous(5).unwrap()).unwrap()
    }

    fn count_correct(ds: &ExerciseDataset, idx: &[usize]) -> usize {
        idx.iter().filter(|&&i| i < ds.reference.len()).count()
    }

    #[test]
    fn ninety_ninety_gives_124_56() {
        let ds = dataset(10, 9);
        let p = split(&ds, 0.7, 0).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (124, 56));
        assert_eq!(count_correct(&ds, &p.train), 62);
    }

    #[test]
    fn half_split_of_four_and_four() {
        let ds = dataset(4, 1);
        for seed in 0..20 {
            let p = split(&ds, 0.5, seed).unwrap();
            assert_eq!(count_correct(&ds, &p.train), 2);
            assert_eq!(count_correct(&ds, &p.test), 2);
            assert_eq!(p.train.len(), 4);
        }
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let ds = dataset(5, 3);
        let a = split(&ds, 0.7, 42).unwrap();
        assert_eq!(a, split(&ds, 0.7, 42).unwrap());
        let mut all: Vec<_> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_per_class() {
        let ds = dataset(1, 1);
        assert!(matches!(split(&ds, 0.5, 0), Err(Error::Split(_))));
        assert!(split(&dataset(2, 1), 1.0, 0).is_err());
    }

    #[test]
    fn loso_counts() {
        let ds = dataset(10, 9);
        let p = leave_one_subject_out(&ds, 3).unwrap();
        assert_eq!(count_correct(&ds, &p.test), 9);
        assert_eq!(p.test.len(), 18);
        assert_eq!(count_correct(&ds, &p.train), 81);
        assert_eq!(p.train.len(), 162);
    }

    #[test]
    fn loso_partitions_each_repetition_once() {
        let ds = dataset(4, 2);
        let mut hits = vec![0; ds.len()];
        for s in ds.subjects() {
            for i in leave_one_subject_out(&ds, s).unwrap().test {
                hits[i] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn loso_errors() {
        assert!(matches!(
            leave_one_subject_out(&dataset(3, 1), 9),
            Err(Error::UnknownSubject(9))
        ));
        assert!(matches!(leave_one_subject_out(&dataset(1, 3), 1), Err(Error::Split(_))));
    }
}

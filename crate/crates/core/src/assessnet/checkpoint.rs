use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssessModel, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::TensorRecord;

pub const CHECKPOINT_FORMAT: &str = "rehab-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimiser state saved alongside weights so training can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub epoch: usize,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
    pub first_moments: Vec<TensorRecord>,
    pub second_moments: Vec<TensorRecord>,
}

/// Model file: versioned header, topology, standardisation and weights.
/// Floats are written with round-trip precision, so a reloaded model
/// reproduces forward outputs exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub(crate) fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!(
                "not a model checkpoint (format `{}`)",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        c.check_header()?;
        Ok(c)
    }
}

impl AssessModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        AssessModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessnet::ModelConfig;
    use crate::dataset::BodyPartMap;
    use ndarray::Array2;

    #[test]
    fn reload_is_bit_exact() {
        let mut c = ModelConfig::new(6, 16, BodyPartMap::contiguous(6).unwrap());
        c.part_channels = 2;
        c.merge_channels = 2;
        c.recurrent_units = vec![3];
        c.seed = 17;
        let mut m = AssessModel::build(&c).unwrap();
        m.set_normalization(vec![0.1; 6], vec![1.7; 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = AssessModel::load(&path).unwrap();
        let x = Array2::from_shape_fn((16, 6), |(t, d)| (t as f64 * 0.77 - d as f64).cos() * 13.1);
        assert_eq!(m.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let m = AssessModel::build_baseline(crate::assessnet::BaselineKind::DeepLstm, 3, 8, 0).unwrap();
        let mut c = m.to_checkpoint();
        c.version = 99;
        assert!(AssessModel::from_checkpoint(&c).is_err());
    }
}

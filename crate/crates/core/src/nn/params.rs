use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter matrices. Insertion order defines [`ParamId`]s and is
/// part of the checkpoint format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn to_snapshot(&self) -> Vec<TensorRecord> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| TensorRecord::new(n, v))
            .collect()
    }

    /// Restores values from records written by [`ParamStore::to_snapshot`].
    /// Names and shapes must match exactly.
    pub fn load_snapshot(&mut self, records: &[TensorRecord]) -> Result<(), String> {
        if records.len() != self.values.len() {
            return Err(format!(
                "checkpoint has {} tensors, model has {}",
                records.len(),
                self.values.len()
            ));
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.name != self.names[i] {
                return Err(format!(
                    "tensor {i}: name `{}` does not match `{}`",
                    rec.name, self.names[i]
                ));
            }
            let m = rec.to_mat()?;
            if m.dim() != self.values[i].dim() {
                return Err(format!("tensor `{}`: shape mismatch", rec.name));
            }
            self.values[i] = m;
        }
        Ok(())
    }
}

/// Serialized form of one matrix: name, shape and row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: &str, m: &Mat) -> Self {
        TensorRecord {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat, String> {
        Mat::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| format!("tensor `{}`: {e}", self.name))
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    g: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            g: store.values.iter().map(|v| Mat::zeros(v.dim())).collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &Mat) {
        self.g[id.0] += delta;
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.g[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.g {
            a.mapv_inplace(|x| x * k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.g.iter().enumerate().map(|(i, m)| (ParamId(i), m))
    }
}

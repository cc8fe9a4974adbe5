//! Dimensionality reduction of frame vectors: maximum-variance column
//! selection, principal component analysis and a recurrent autoencoder.
//! Reducers are fitted on reference repetitions only; patient data is
//! transformed with the fitted parameters.

mod autoencoder;
mod maxvar;
mod pca;

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use autoencoder::{Autoencoder, AutoencoderConfig, AutoencoderRecord, TrainingHistory};
pub use maxvar::select_max_variance;
pub use pca::{fit_pca_frames, PcaParams};

use crate::dataset::{ExerciseDataset, Repetition};
use crate::error::{Error, Result};

/// Default code dimension for maximum variance and PCA.
pub const DEFAULT_LINEAR_CODE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    MaxVariance,
    Pca,
    Autoencoder,
}

impl ReducerKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ReducerKind::MaxVariance => "mv",
            ReducerKind::Pca => "pca",
            ReducerKind::Autoencoder => "ae",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ReducerParams {
    MaxVariance { indices: Vec<usize> },
    Pca(PcaParams),
    Autoencoder(Box<Autoencoder>),
}

/// A fitted map from `input_dim`-dimensional frames to `code_dim`
/// dimensional codes.
#[derive(Debug, Clone)]
pub struct Reducer {
    pub input_dim: usize,
    pub code_dim: usize,
    pub params: ReducerParams,
}

/// Stacks all frames of the given repetitions into one matrix.
pub fn pooled_frames<'a>(reps: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = reps.into_iter().map(|r| r.view()).collect();
    if views.is_empty() {
        return Err(Error::Dataset("no frames to pool".into()));
    }
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

fn reference_frames(ds: &ExerciseDataset) -> Result<Array2<f64>> {
    if ds.reference.is_empty() {
        return Err(Error::Dataset("reference set is empty".into()));
    }
    pooled_frames(ds.reference.iter().map(|r| &r.values))
}

impl Reducer {
    pub fn kind(&self) -> ReducerKind {
        match self.params {
            ReducerParams::MaxVariance { .. } => ReducerKind::MaxVariance,
            ReducerParams::Pca(_) => ReducerKind::Pca,
            ReducerParams::Autoencoder(_) => ReducerKind::Autoencoder,
        }
    }

    pub fn fit_max_variance(ds: &ExerciseDataset, m: usize) -> Result<Self> {
        let frames = reference_frames(ds)?;
        let indices = select_max_variance(&frames, m)?;
        Ok(Reducer {
            input_dim: frames.ncols(),
            code_dim: m,
            params: ReducerParams::MaxVariance { indices },
        })
    }

    pub fn fit_pca(ds: &ExerciseDataset, m: usize) -> Result<Self> {
        let frames = reference_frames(ds)?;
        Ok(Reducer {
            input_dim: frames.ncols(),
            code_dim: m,
            params: ReducerParams::Pca(fit_pca_frames(&frames, m)?),
        })
    }

    pub fn fit_autoencoder(ds: &ExerciseDataset, config: &AutoencoderConfig, seed: u64) -> Result<Self> {
        if ds.reference.is_empty() {
            return Err(Error::Dataset("reference set is empty".into()));
        }
        let seqs: Vec<Array2<f64>> = ds.reference.iter().map(|r| r.values.clone()).collect();
        let ae = Autoencoder::fit(&seqs, config, seed)?;
        Ok(Reducer {
            input_dim: ae.input_dim,
            code_dim: ae.code_dim(),
            params: ReducerParams::Autoencoder(Box::new(ae)),
        })
    }

    /// Reduces a `frames x input_dim` sequence to `frames x code_dim`.
    pub fn encode_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "reducer expects {} dimensions, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        match &self.params {
            ReducerParams::MaxVariance { indices } => Ok(x.select(Axis(1), indices)),
            ReducerParams::Pca(p) => Ok(p.transform(x)),
            ReducerParams::Autoencoder(ae) => ae.encode(x),
        }
    }

    pub fn encode(&self, rep: &Repetition) -> Result<Array2<f64>> {
        self.encode_matrix(&rep.values)
    }

    /// Maps codes back to frame space where the reducer is invertible
    /// (PCA, autoencoder).
    pub fn decode(&self, code: &Array2<f64>) -> Result<Array2<f64>> {
        match &self.params {
            ReducerParams::MaxVariance { .. } => {
                Err(Error::Unsupported("maximum-variance selection has no inverse".into()))
            }
            ReducerParams::Pca(p) => Ok(p.inverse_transform(code)),
            ReducerParams::Autoencoder(ae) => ae.decode(code),
        }
    }

    pub fn to_file(&self) -> ReducerFile {
        ReducerFile {
            format: REDUCER_FORMAT.to_string(),
            version: REDUCER_VERSION,
            kind: self.kind(),
            input_dim: self.input_dim,
            code_dim: self.code_dim,
            indices: match &self.params {
                ReducerParams::MaxVariance { indices } => Some(indices.clone()),
                _ => None,
            },
            pca: match &self.params {
                ReducerParams::Pca(p) => Some(p.clone()),
                _ => None,
            },
            autoencoder: match &self.params {
                ReducerParams::Autoencoder(ae) => Some(ae.to_record()),
                _ => None,
            },
        }
    }

    pub fn from_file(f: ReducerFile) -> Result<Self> {
        if f.format != REDUCER_FORMAT || f.version != REDUCER_VERSION {
            return Err(Error::Serde(format!(
                "unsupported reducer file {} v{}",
                f.format, f.version
            )));
        }
        let missing = |what: &str| Error::Serde(format!("reducer file lacks `{what}`"));
        let params = match f.kind {
            ReducerKind::MaxVariance => ReducerParams::MaxVariance {
                indices: f.indices.ok_or_else(|| missing("indices"))?,
            },
            ReducerKind::Pca => ReducerParams::Pca(f.pca.ok_or_else(|| missing("pca"))?),
            ReducerKind::Autoencoder => ReducerParams::Autoencoder(Box::new(Autoencoder::from_record(
                &f.autoencoder.ok_or_else(|| missing("autoencoder"))?,
            )?)),
        };
        Ok(Reducer {
            input_dim: f.input_dim,
            code_dim: f.code_dim,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Reducer::from_file(serde_json::from_str(&text)?)
    }
}

pub const REDUCER_FORMAT: &str = "rehab-reducer";
pub const REDUCER_VERSION: u32 = 1;

/// On-disk reducer layout (JSON). Exactly one of `indices`, `pca` or
/// `autoencoder` is present, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducerFile {
    pub format: String,
    pub version: u32,
    pub kind: ReducerKind,
    pub input_dim: usize,
    pub code_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoencoder: Option<AutoencoderRecord>,
}

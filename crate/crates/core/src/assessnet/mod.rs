//! Spatio-temporal network regressing a quality score from one
//! repetition, with ablation switches and two plain baselines.
//!
//! Every body part is processed by a temporal pyramid: the part's columns
//! are decimated by factors 1, 2, 4 and 8, each scale passes through a
//! two-layer multi-branch convolution block whose stride makes all scales
//! end at `frames / 8` rows, and the scale outputs are concatenated. Part
//! features are merged arms first, then legs, then with the trunk, each
//! merge followed by another block. A stack of LSTM layers reads the
//! merged sequence and a linear unit maps its final state to the score.

mod checkpoint;
mod network;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, TrainingState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use network::{CNN_CHANNELS, CNN_HIDDEN, CNN_KERNEL, LSTM_UNITS};

use crate::dataset::{BodyPartMap, ExerciseDataset};
use crate::error::{Error, Result};
use crate::nn::{Mat, ParamStore, Tape, Var};
use network::{Baseline, Noise, SpatioTemporal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub canonical_t: usize,
    pub body_parts: BodyPartMap,
    /// Decimation factors of the pyramid levels.
    pub pyramid_factors: Vec<usize>,
    pub branch_kernels: Vec<usize>,
    /// Channels per branch in body-part blocks.
    pub part_channels: usize,
    /// Channels per branch in merge blocks.
    pub merge_channels: usize,
    pub dropout: f64,
    pub recurrent_units: Vec<usize>,
    /// Width of the fully connected layer replacing the recurrent stack.
    pub pooled_units: usize,
    pub use_branches: bool,
    pub use_pyramids: bool,
    pub use_hierarchy: bool,
    pub use_recurrent: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, canonical_t: usize, body_parts: BodyPartMap) -> Self {
        ModelConfig {
            input_dim,
            canonical_t,
            body_parts,
            pyramid_factors: vec![1, 2, 4, 8],
            branch_kernels: vec![3, 5, 7],
            part_channels: 16,
            merge_channels: 32,
            dropout: 0.25,
            recurrent_units: vec![80, 40, 40, 80],
            pooled_units: 80,
            use_branches: true,
            use_pyramids: true,
            use_hierarchy: true,
            use_recurrent: true,
            seed: 0,
        }
    }

    pub fn for_dataset(ds: &ExerciseDataset) -> Self {
        ModelConfig::new(ds.dims(), ds.canonical_t, ds.body_parts.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.body_parts.dims() != self.input_dim {
            return Err(Error::Config(format!(
                "body-part map covers {} dimensions, model input has {}",
                self.body_parts.dims(),
                self.input_dim
            )));
        }
        if self.pyramid_factors.is_empty() || self.pyramid_factors[0] != 1 {
            return Err(Error::Config("pyramid factors must start with 1".into()));
        }
        let top = self.max_factor();
        if self.pyramid_factors.iter().any(|f| *f == 0 || !top.is_multiple_of(*f)) {
            return Err(Error::Config(format!(
                "pyramid factors {:?} must all divide {top}",
                self.pyramid_factors
            )));
        }
        if self.canonical_t == 0 || !self.canonical_t.is_multiple_of(top) {
            return Err(Error::Config(format!(
                "canonical length {} is not a positive multiple of {top}",
                self.canonical_t
            )));
        }
        if self.branch_kernels.is_empty() || self.branch_kernels.contains(&0) {
            return Err(Error::Config("branch filter lengths must be positive".into()));
        }
        if self.part_channels == 0 || self.merge_channels == 0 || self.pooled_units == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.use_recurrent && (self.recurrent_units.is_empty() || self.recurrent_units.contains(&0)) {
            return Err(Error::Config("recurrent stack needs non-empty layers".into()));
        }
        Ok(())
    }

    pub fn max_factor(&self) -> usize {
        self.pyramid_factors.iter().copied().max().unwrap_or(1)
    }

    /// Pyramid levels in use: all of them, or the full-scale stream only.
    pub fn active_factors(&self) -> Vec<usize> {
        if self.use_pyramids {
            self.pyramid_factors.clone()
        } else {
            vec![1]
        }
    }

    /// Frames seen by the recurrent stack.
    pub fn feature_frames(&self) -> usize {
        self.canonical_t / self.max_factor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    DeepCnn,
    DeepLstm,
}

impl BaselineKind {
    pub fn short_name(self) -> &'static str {
        match self {
            BaselineKind::DeepCnn => "deep_cnn",
            BaselineKind::DeepLstm => "deep_lstm",
        }
    }
}

/// Everything needed to rebuild a model's topology.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelSpec {
    SpatioTemporal(ModelConfig),
    Baseline {
        kind: BaselineKind,
        input_dim: usize,
        canonical_t: usize,
        seed: u64,
    },
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::SpatioTemporal(c) => c.input_dim,
            ModelSpec::Baseline { input_dim, .. } => *input_dim,
        }
    }

    pub fn canonical_t(&self) -> usize {
        match self {
            ModelSpec::SpatioTemporal(c) => c.canonical_t,
            ModelSpec::Baseline { canonical_t, .. } => *canonical_t,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::SpatioTemporal(c) => c.seed,
            ModelSpec::Baseline { seed, .. } => *seed,
        }
    }

    /// Same topology with a different initialisation seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::SpatioTemporal(c) => c.seed = seed,
            ModelSpec::Baseline { seed: s, .. } => *s = seed,
        }
        s
    }
}

#[derive(Debug, Clone)]
enum Network {
    SpatioTemporal(SpatioTemporal),
    Baseline(Baseline),
}

/// A network with its weights and input standardisation.
#[derive(Debug, Clone)]
pub struct AssessModel {
    pub spec: ModelSpec,
    store: ParamStore,
    net: Network,
    input_offset: Vec<f64>,
    input_scale: Vec<f64>,
    pub training_state: Option<TrainingState>,
}

impl AssessModel {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        AssessModel::from_spec(&ModelSpec::SpatioTemporal(config.clone()))
    }

    pub fn build_baseline(kind: BaselineKind, input_dim: usize, canonical_t: usize, seed: u64) -> Result<Self> {
        AssessModel::from_spec(&ModelSpec::Baseline {
            kind,
            input_dim,
            canonical_t,
            seed,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
        let net = match spec {
            ModelSpec::SpatioTemporal(cfg) => {
                cfg.validate()?;
                Network::SpatioTemporal(SpatioTemporal::new(&mut store, &mut rng, cfg))
            }
            ModelSpec::Baseline {
                kind,
                input_dim,
                canonical_t,
                ..
            } => {
                if *input_dim == 0 || *canonical_t == 0 {
                    return Err(Error::Config("baseline needs positive input size and length".into()));
                }
                Network::Baseline(Baseline::new(&mut store, &mut rng, *kind, *input_dim, *canonical_t))
            }
        };
        let d = spec.input_dim();
        Ok(AssessModel {
            spec: spec.clone(),
            store,
            net,
            input_offset: vec![0.0; d],
            input_scale: vec![1.0; d],
            training_state: None,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_offset, &self.input_scale)
    }

    /// Per-dimension standardisation applied before the network; scale
    /// entries must be positive.
    pub fn set_normalization(&mut self, offset: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let d = self.input_dim();
        if offset.len() != d || scale.len() != d {
            return Err(Error::Shape(format!("normalisation for {d} dimensions expected")));
        }
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::Domain("normalisation scales must be positive and finite".into()));
        }
        self.input_offset = offset;
        self.input_scale = scale;
        Ok(())
    }

    /// Sets the standardisation from the mean and standard deviation of
    /// all frames of `seqs`. Constant dimensions get unit scale.
    pub fn fit_normalization(&mut self, seqs: &[&Array2<f64>]) -> Result<()> {
        let frames = crate::dimred::pooled_frames(seqs.iter().copied())?;
        let mean = frames.mean_axis(Axis(0)).expect("non-empty");
        let std = frames.std_axis(Axis(0), 0.0);
        let scale = std.iter().map(|s| if *s > 1e-8 { *s } else { 1.0 }).collect();
        self.set_normalization(mean.to_vec(), scale)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        let want = (self.spec.canonical_t(), self.input_dim());
        if x.dim() != want {
            return Err(Error::Shape(format!(
                "model expects {}x{} input, got {}x{}",
                want.0,
                want.1,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn normalize(&self, x: &Array2<f64>) -> Mat {
        let mut out = x.clone();
        for (mut col, (o, s)) in out
            .axis_iter_mut(Axis(1))
            .zip(self.input_offset.iter().zip(&self.input_scale))
        {
            col.mapv_inplace(|v| (v - o) / s);
        }
        out
    }

    /// Records the forward pass on `tape` and returns the `1 x 1` output.
    /// Dropout is active only when `noise` carries a generator.
    pub fn forward_on<'t>(
        &self,
        tape: &mut Tape<'t>,
        x: &Array2<f64>,
        mut noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_input(x)?;
        tape.set_tag("input");
        let xv = tape.input(self.normalize(x));
        let out = match &self.net {
            Network::SpatioTemporal(n) => {
                let noise: &mut Noise = &mut noise;
                n.forward(tape, xv, noise)
            }
            Network::Baseline(b) => b.forward(tape, xv),
        };
        tape.check_finite()?;
        Ok(out)
    }

    /// Evaluation-mode score for one repetition.
    pub fn predict(&self, x: &Array2<f64>) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward_on(&mut tape, x, None)?;
        Ok(tape.value(out)[[0, 0]])
    }

    /// Evaluation-mode scores, in input order.
    pub fn forward(&self, batch: &[&Array2<f64>]) -> Result<Vec<f64>> {
        batch.par_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            input_offset: self.input_offset.clone(),
            input_scale: self.input_scale.clone(),
            tensors: self.store.to_snapshot(),
            training: self.training_state.clone(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.check_header()?;
        let mut m = AssessModel::from_spec(&c.spec)?;
        m.store.load_snapshot(&c.tensors).map_err(Error::Serde)?;
        m.set_normalization(c.input_offset.clone(), c.input_scale.clone())?;
        m.training_state = c.training.clone();
        Ok(m)
    }
}

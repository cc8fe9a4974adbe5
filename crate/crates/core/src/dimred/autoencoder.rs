//! Recurrent sequence autoencoder. The encoder is a stack of LSTM layers
//! (30, 10, 4 units by default) emitting one code vector per frame; the
//! decoder mirrors it (10, 30, then one unit per input dimension).
//! Inputs are min-max scaled per dimension to `[-1, 1]` using the training
//! frames, so the bounded LSTM output can reconstruct them.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{accumulate_gradients, Adam, Forward, Lstm, ParamStore, Tape, TensorRecord, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub encoder_units: Vec<usize>,
    /// Hidden decoder layers; a final layer with one unit per input
    /// dimension is always appended.
    pub decoder_units: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without improvement of the monitored
    /// reconstruction loss.
    pub patience: usize,
    pub batch_size: usize,
    /// Fraction of sequences held out to monitor reconstruction error.
    /// Zero monitors the training loss.
    pub validation_fraction: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            encoder_units: vec![30, 10, 4],
            decoder_units: vec![10, 30],
            learning_rate: 1e-3,
            max_epochs: 300,
            patience: 20,
            batch_size: 5,
            validation_fraction: 0.0,
        }
    }
}

impl AutoencoderConfig {
    pub fn code_dim(&self) -> usize {
        self.encoder_units.last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.encoder_units.is_empty() || self.encoder_units.contains(&0) {
            return Err(Error::Config("encoder needs at least one non-empty layer".into()));
        }
        if self.decoder_units.contains(&0) || self.batch_size == 0 {
            return Err(Error::Config(
                "decoder layer sizes and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    pub monitor_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Reconstruction error of the restored (best) weights on the training
    /// sequences.
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub input_dim: usize,
    offset: Vec<f64>,
    scale: Vec<f64>,
    store: ParamStore,
    encoder: Vec<Lstm>,
    decoder: Vec<Lstm>,
    pub history: TrainingHistory,
}

impl Autoencoder {
    fn build(config: AutoencoderConfig, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mut width = input_dim;
        let encoder = config
            .encoder_units
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                let l = Lstm::new(&mut store, &mut rng, &format!("enc{i}"), width, u);
                width = u;
                l
            })
            .collect();
        let decoder = config
            .decoder_units
            .iter()
            .copied()
            .chain(std::iter::once(input_dim))
            .enumerate()
            .map(|(i, u)| {
                let l = Lstm::new(&mut store, &mut rng, &format!("dec{i}"), width, u);
                width = u;
                l
            })
            .collect();
        Autoencoder {
            config,
            input_dim,
            offset: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            store,
            encoder,
            decoder,
            history: TrainingHistory::default(),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.offset[d]) / self.scale[d];
            }
        }
        out
    }

    fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (d, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[d] + self.offset[d];
            }
        }
        out
    }

    fn run(layers: &[Lstm], tape: &mut Tape, mut x: Var, tag: &str) -> Var {
        for (i, l) in layers.iter().enumerate() {
            tape.set_tag(&format!("{tag}{i}"));
            x = l.forward(tape, x).0;
        }
        x
    }

    /// Reconstruction of one normalised sequence; returns (output, loss).
    fn reconstruct_normalized(&self, tape: &mut Tape, x: &Array2<f64>) -> (Var, f64) {
        let input = tape.input(x.clone());
        let code = Self::run(&self.encoder, tape, input, "enc");
        let out = Self::run(&self.decoder, tape, code, "dec");
        let diff = tape.value(out) - x;
        let loss = diff.mapv(|v| v * v).mean().unwrap_or(0.0);
        (out, loss)
    }

    fn loss_over(&self, seqs: &[Array2<f64>]) -> f64 {
        use rayon::prelude::*;
        let losses: Vec<f64> = seqs
            .par_iter()
            .map(|x| {
                let mut tape = Tape::new(&self.store);
                self.reconstruct_normalized(&mut tape, x).1
            })
            .collect();
        losses.iter().sum::<f64>() / seqs.len().max(1) as f64
    }

    /// Maps a `frames x input_dim` sequence to `frames x code_dim` codes.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "autoencoder expects {} dimensions, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let mut tape = Tape::new(&self.store);
        let input = tape.input(self.normalize(x));
        let code = Self::run(&self.encoder, &mut tape, input, "enc");
        tape.check_finite()?;
        Ok(tape.value(code).clone())
    }

    /// Maps codes back to the input space.
    pub fn decode(&self, code: &Array2<f64>) -> Result<Array2<f64>> {
        if code.ncols() != self.code_dim() {
            return Err(Error::Shape(format!(
                "autoencoder code has {} dimensions, got {}",
                self.code_dim(),
                code.ncols()
            )));
        }
        let mut tape = Tape::new(&self.store);
        let input = tape.input(code.clone());
        let out = Self::run(&self.decoder, &mut tape, input, "dec");
        tape.check_finite()?;
        Ok(self.denormalize(tape.value(out)))
    }

    /// Mean squared reconstruction error in normalised units.
    pub fn reconstruction_error(&self, seqs: &[Array2<f64>]) -> f64 {
        let normalized: Vec<_> = seqs.iter().map(|s| self.normalize(s)).collect();
        self.loss_over(&normalized)
    }

    /// Trains on `seqs` (all `frames x input_dim`).
    pub fn fit(seqs: &[Array2<f64>], config: &AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let first = seqs
            .first()
            .ok_or_else(|| Error::Dataset("autoencoder needs at least one sequence".into()))?;
        let dims = first.ncols();
        if seqs.iter().any(|s| s.ncols() != dims || s.nrows() == 0) {
            return Err(Error::Shape("autoencoder sequences differ in dimension".into()));
        }
        let mut ae = Autoencoder::build(config.clone(), dims, seed);

        for d in 0..dims {
            let (lo, hi) = seqs
                .iter()
                .flat_map(|s| s.column(d).to_vec())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ae.offset[d] = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            ae.scale[d] = if half > 1e-12 { half } else { 1.0 };
        }
        let normalized: Vec<Array2<f64>> = seqs.iter().map(|s| ae.normalize(s)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11e);
        let mut order: Vec<usize> = (0..normalized.len()).collect();
        let n_val = ((normalized.len() as f64) * config.validation_fraction).floor() as usize;
        let n_val = n_val.min(normalized.len().saturating_sub(1));
        order.shuffle(&mut rng);
        let (val_idx, train_idx) = order.split_at(n_val);
        let train: Vec<Array2<f64>> = train_idx.iter().map(|&i| normalized[i].clone()).collect();
        let val: Vec<Array2<f64>> = val_idx.iter().map(|&i| normalized[i].clone()).collect();

        let mut opt = Adam::new(config.learning_rate);
        let initial = ae.loss_over(&train);
        ae.history.initial_loss = initial;
        let mut best = (f64::INFINITY, 0usize, ae.store.clone());
        let mut since_best = 0;
        let mut batch_order: Vec<usize> = (0..train.len()).collect();

        for epoch in 1..=config.max_epochs {
            batch_order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in batch_order.chunks(config.batch_size) {
                let batch: Vec<&Array2<f64>> = chunk.iter().map(|&i| &train[i]).collect();
                let n = batch.len() as f64;
                let (grads, loss) = accumulate_gradients(&ae.store, &batch, |tape, x| {
                    let (out, loss) = ae.reconstruct_normalized(tape, x);
                    let k = 2.0 / (x.len() as f64 * n);
                    let seed = (tape.value(out) - *x).mapv(|v| v * k);
                    Ok(Forward {
                        output: out,
                        seed,
                        loss,
                    })
                })?;
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        learning_rate: config.learning_rate,
                    });
                }
                opt.step(&mut ae.store, &grads);
                epoch_loss += loss;
            }
            let train_loss = epoch_loss / train.len() as f64;
            let monitor = if val.is_empty() { train_loss } else { ae.loss_over(&val) };
            if !monitor.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            ae.history.train_loss.push(train_loss);
            ae.history.monitor_loss.push(monitor);
            if monitor < best.0 {
                best = (monitor, epoch, ae.store.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        if best.1 > 0 {
            ae.store = best.2;
        }
        ae.history.best_epoch = best.1;
        ae.history.final_loss = ae.loss_over(&train);
        log::info!(
            "autoencoder: {} epochs, best epoch {}, reconstruction {:.3e} -> {:.3e}",
            ae.history.train_loss.len(),
            best.1,
            initial,
            ae.history.final_loss
        );
        Ok(ae)
    }

    pub fn to_record(&self) -> AutoencoderRecord {
        AutoencoderRecord {
            config: self.config.clone(),
            input_dim: self.input_dim,
            offset: self.offset.clone(),
            scale: self.scale.clone(),
            history: self.history.clone(),
            tensors: self.store.to_snapshot(),
        }
    }

    pub fn from_record(rec: &AutoencoderRecord) -> Result<Self> {
        rec.config.validate()?;
        let mut ae = Autoencoder::build(rec.config.clone(), rec.input_dim, 0);
        if rec.offset.len() != rec.input_dim || rec.scale.len() != rec.input_dim {
            return Err(Error::Serde("autoencoder normalisation length mismatch".into()));
        }
        ae.offset = rec.offset.clone();
        ae.scale = rec.scale.clone();
        ae.history = rec.history.clone();
        ae.store.load_snapshot(&rec.tensors).map_err(Error::Serde)?;
        Ok(ae)
    }
}

/// Serialized autoencoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderRecord {
    pub config: AutoencoderConfig,
    pub input_dim: usize,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    pub history: TrainingHistory,
    pub tensors: Vec<TensorRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AutoencoderConfig {
        AutoencoderConfig {
            encoder_units: vec![6, 3],
            decoder_units: vec![6],
            learning_rate: 1e-2,
            max_epochs: 60,
            patience: 60,
            batch_size: 3,
            validation_fraction: 0.0,
        }
    }

    fn sinusoids(n: usize, frames: usize, dims: usize) -> Vec<Array2<f64>> {
        (0..n)
            .map(|k| {
                Array2::from_shape_fn((frames, dims), |(t, d)| {
                    10.0 * ((t as f64 / frames as f64) * std::f64::consts::TAU + d as f64 + 0.1 * k as f64).sin()
                })
            })
            .collect()
    }

    #[test]
    fn shapes_and_code_dimension() {
        let data = sinusoids(4, 16, 5);
        let ae = Autoencoder::fit(
            &data,
            &AutoencoderConfig {
                max_epochs: 2,
                ..small()
            },
            0,
        )
        .unwrap();
        let code = ae.encode(&data[0]).unwrap();
        assert_eq!(code.dim(), (16, 3));
        assert_eq!(ae.decode(&code).unwrap().dim(), (16, 5));
        assert!(ae.encode(&Array2::zeros((16, 4))).is_err());
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let data = sinusoids(6, 16, 4);
        let ae = Autoencoder::fit(&data, &small(), 3).unwrap();
        assert!(ae.history.final_loss < ae.history.initial_loss);
    }

    #[test]
    fn constant_sequences_train_below_init() {
        let data: Vec<_> = (0..4).map(|k| Array2::from_elem((8, 3), k as f64)).collect();
        let ae = Autoencoder::fit(&data, &small(), 1).unwrap();
        assert!(ae.history.final_loss < ae.history.initial_loss);
    }

    #[test]
    fn fixed_seed_reproduces_final_loss() {
        let data = sinusoids(4, 16, 4);
        let cfg = AutoencoderConfig {
            max_epochs: 10,
            ..small()
        };
        let a = Autoencoder::fit(&data, &cfg, 5).unwrap();
        let b = Autoencoder::fit(&data, &cfg, 5).unwrap();
        assert!((a.history.final_loss - b.history.final_loss).abs() < 1e-6);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn record_round_trip_is_exact() {
        let data = sinusoids(3, 8, 4);
        let ae = Autoencoder::fit(
            &data,
            &AutoencoderConfig {
                max_epochs: 3,
                ..small()
            },
            2,
        )
        .unwrap();
        let json = serde_json::to_string(&ae.to_record()).unwrap();
        let back = Autoencoder::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(ae.encode(&data[1]).unwrap(), back.encode(&data[1]).unwrap());
    }
}

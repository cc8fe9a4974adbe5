//! Supervised regression of quality scores: mini-batch training with
//! early stopping, evaluation by mean absolute deviation, multi-run
//! averaging and ablation sweeps.

mod ablation;
pub mod pipeline;

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_sweep, AblationRow, AblationTable, Variant};

use crate::assessnet::{AssessModel, ModelSpec, TrainingState};
use crate::dataset::Correctness;
use crate::error::{Error, Result};
use crate::nn::{accumulate_gradients, Adam, Forward, Mat};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; `0`
    /// disables early stopping.
    pub patience: usize,
    pub runs: usize,
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 5,
            learning_rate: 1e-3,
            max_epochs: 500,
            patience: 30,
            runs: 5,
            split_ratio: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.runs == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, runs and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One repetition with its target score.
#[derive(Debug, Clone)]
pub struct Example {
    pub name: String,
    pub subject: u32,
    pub label: Correctness,
    pub input: Array2<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub repetition: String,
    pub subject: u32,
    pub label: Correctness,
    pub target: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mad: f64,
    pub mse: f64,
    /// `target - prediction`, in input order.
    pub residuals: Vec<f64>,
    pub predictions: Vec<Prediction>,
}

/// Mean absolute deviation and residuals of evaluation-mode predictions.
pub fn evaluate(model: &AssessModel, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let inputs: Vec<&Array2<f64>> = examples.iter().map(|e| &e.input).collect();
    let preds = model.forward(&inputs)?;
    let residuals: Vec<f64> = examples.iter().zip(&preds).map(|(e, p)| e.target - p).collect();
    let n = residuals.len() as f64;
    Ok(Evaluation {
        mad: residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
        mse: residuals.iter().map(|r| r * r).sum::<f64>() / n,
        residuals,
        predictions: examples
            .iter()
            .zip(preds)
            .map(|(e, p)| Prediction {
                repetition: e.name.clone(),
                subject: e.subject,
                label: e.label,
                target: e.target,
                prediction: p,
            })
            .collect(),
    })
}

/// Mean of per-example squared errors of a batch, and its gradient,
/// accumulated over the model's parameters. `dropout_seeds` has one entry
/// per example; `None` disables dropout.
pub fn batch_loss_and_grads(
    model: &AssessModel,
    batch: &[&Example],
    dropout_seeds: Option<&[u64]>,
) -> Result<(crate::nn::Grads, f64)> {
    let n = batch.len() as f64;
    let items: Vec<(&Example, Option<u64>)> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| (*e, dropout_seeds.map(|s| s[i])))
        .collect();
    let (grads, loss) = accumulate_gradients(model.store(), &items, |tape, (ex, seed)| {
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let out = model.forward_on(tape, &ex.input, rng.as_mut())?;
        let err = tape.value(out)[[0, 0]] - ex.target;
        Ok(Forward {
            output: out,
            seed: Mat::from_elem((1, 1), 2.0 * err / n),
            loss: err * err / n,
        })
    })?;
    Ok((grads, loss))
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Evaluation-mode training MSE before the first update and at the
    /// restored weights.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train: Evaluation,
    pub val: Option<Evaluation>,
    #[serde(skip)]
    pub seconds: f64,
}

impl RunReport {
    /// Validation MAD, or training MAD when no validation set was given.
    pub fn mad(&self) -> f64 {
        self.val.as_ref().map_or(self.train.mad, |v| v.mad)
    }
}

fn mse(model: &AssessModel, examples: &[Example]) -> Result<f64> {
    Ok(evaluate(model, examples)?.mse)
}

/// Trains `model` in place. The input standardisation is fitted on the
/// training inputs. Early stopping monitors validation loss (training
/// loss when `val` is empty); the best weights are restored at the end.
pub fn train(
    model: &mut AssessModel,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    if let Some(e) = train.iter().chain(val).find(|e| !(0.0..=1.0).contains(&e.target)) {
        return Err(Error::Domain(format!(
            "target {} of {} outside [0, 1]",
            e.target, e.name
        )));
    }
    let start = Instant::now();
    let inputs: Vec<&Array2<f64>> = train.iter().map(|e| &e.input).collect();
    model.fit_normalization(&inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7a11));
    let mut opt = Adam::new(cfg.learning_rate);
    let initial = mse(model, train)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.store().clone());
    let mut since_best = 0usize;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let (grads, loss) = batch_loss_and_grads(model, &batch, Some(&seeds))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            opt.step(model.store_mut(), &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let monitor = if val.is_empty() { train_loss } else { mse(model, val)? };
        if !monitor.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        train_curve.push(train_loss);
        val_curve.push(monitor);
        if monitor < best.0 {
            best = (monitor, epoch, model.store().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
        log::debug!("epoch {epoch}: train {train_loss:.3e} monitor {monitor:.3e}");
    }
    let epochs = train_curve.len();
    *model.store_mut() = best.2;
    let (m, v) = opt.moments();
    model.training_state = Some(TrainingState {
        epoch: epochs,
        best_epoch: best.1,
        optimizer_steps: opt.steps(),
        first_moments: m,
        second_moments: v,
    });
    let train_eval = evaluate(model, train)?;
    let val_eval = if val.is_empty() {
        None
    } else {
        Some(evaluate(model, val)?)
    };
    let report = RunReport {
        seed,
        epochs,
        best_epoch: best.1,
        stopped_early,
        initial_train_loss: initial,
        final_train_loss: train_eval.mse,
        train_loss: train_curve,
        val_loss: val_curve,
        train: train_eval,
        val: val_eval,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "run seed {seed}: {epochs} epochs (best {}), train MAD {:.4}, MAD {:.4}",
        report.best_epoch,
        report.train.mad,
        report.mad()
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(Box<RunReport>),
    Failed { seed: u64, error: String },
}

/// Results of several runs that differ only in initialisation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub runs: Vec<RunOutcome>,
    /// Mean of the completed runs' MADs.
    pub mean_mad: f64,
    /// Standard error of that mean (zero with fewer than two runs).
    pub std_error: f64,
}

impl TrainReport {
    pub fn from_runs(runs: Vec<RunOutcome>) -> Result<Self> {
        let mads: Vec<f64> = runs
            .iter()
            .filter_map(|r| match r {
                RunOutcome::Completed(r) => Some(r.mad()),
                RunOutcome::Failed { .. } => None,
            })
            .collect();
        if mads.is_empty() {
            let errors: Vec<&str> = runs
                .iter()
                .filter_map(|r| match r {
                    RunOutcome::Failed { error, .. } => Some(error.as_str()),
                    _ => None,
                })
                .collect();
            return Err(Error::Numerical(format!(
                "every training run failed: {}",
                errors.join("; ")
            )));
        }
        let n = mads.len() as f64;
        let mean = mads.iter().sum::<f64>() / n;
        let std_error = if mads.len() > 1 {
            (mads.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        Ok(TrainReport {
            runs,
            mean_mad: mean,
            std_error,
        })
    }

    pub fn completed(&self) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().filter_map(|r| match r {
            RunOutcome::Completed(r) => Some(r.as_ref()),
            RunOutcome::Failed { .. } => None,
        })
    }

    pub fn seconds(&self) -> f64 {
        self.completed().map(|r| r.seconds).sum()
    }

    /// `run,epoch,train_loss,val_loss` rows for plotting.
    pub fn loss_curves_csv(&self) -> String {
        let mut out = String::from("run,epoch,train_loss,val_loss\n");
        for (i, r) in self.completed().enumerate() {
            for (e, (t, v)) in r.train_loss.iter().zip(&r.val_loss).enumerate() {
                out.push_str(&format!("{i},{},{t:e},{v:e}\n", e + 1));
            }
        }
        out
    }
}

/// Trains `cfg.runs` models from `spec`, one seed per run derived from
/// `seed`. Divergent runs are recorded as failures. Returns the report
/// and the trained models of completed runs, in run order.
pub fn train_runs(
    spec: &ModelSpec,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainReport, Vec<(usize, AssessModel)>)> {
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(cfg.runs);
    let mut models = Vec::new();
    for run in 0..cfg.runs {
        let run_seed = derive_seed(seed, run as u64);
        let mut model = AssessModel::from_spec(&spec.with_seed(run_seed))?;
        match train(&mut model, train_set, val_set, cfg, run_seed) {
            Ok(r) => {
                outcomes.push(RunOutcome::Completed(Box::new(r)));
                models.push((run, model));
            }
            Err(e @ (Error::Divergence { .. } | Error::Numerical(_))) => {
                log::warn!("run {run} (seed {run_seed}) failed: {e}");
                outcomes.push(RunOutcome::Failed {
                    seed: run_seed,
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((TrainReport::from_runs(outcomes)?, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessnet::ModelConfig;
    use crate::dataset::BodyPartMap;

    fn tiny_spec() -> ModelSpec {
        let mut c = ModelConfig::new(6, 16, BodyPartMap::contiguous(6).unwrap());
        c.part_channels = 2;
        c.merge_channels = 3;
        c.recurrent_units = vec![6];
        c.dropout = 0.0;
        ModelSpec::SpatioTemporal(c)
    }

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let target = 0.2 + 0.6 * (i as f64) / (n - 1) as f64;
                Example {
                    name: format!("r{i}"),
                    subject: i as u32 % 2,
                    label: if i % 2 == 0 {
                        Correctness::Correct
                    } else {
                        Correctness::Incorrect
                    },
                    input: Array2::from_shape_fn((16, 6), |(t, d)| {
                        target * ((t as f64) * 0.4 + d as f64).sin() * 3.0 + d as f64
                    }),
                    target,
                }
            })
            .collect()
    }

    #[test]
    fn evaluate_examples() {
        let model = AssessModel::from_spec(&tiny_spec()).unwrap();
        let ex = examples(4);
        let e = evaluate(&model, &ex).unwrap();
        assert_eq!(e.residuals.len(), 4);
        assert!((e.mad - e.residuals.iter().map(|r| r.abs()).sum::<f64>() / 4.0).abs() < 1e-15);
        let mut rev = ex.clone();
        rev.reverse();
        assert!((evaluate(&model, &rev).unwrap().mad - e.mad).abs() < 1e-15);
        assert!(evaluate(&model, &[]).is_err());
    }

    #[test]
    fn batch_loss_is_mean_squared_error() {
        let model = AssessModel::from_spec(&tiny_spec()).unwrap();
        let ex = examples(5);
        let refs: Vec<&Example> = ex.iter().collect();
        let (_, loss) = batch_loss_and_grads(&model, &refs, None).unwrap();
        assert!((loss - evaluate(&model, &ex).unwrap().mse).abs() < 1e-9);
    }

    #[test]
    fn overfits_eight_examples() {
        let mut model = AssessModel::from_spec(&tiny_spec()).unwrap();
        let ex = examples(8);
        let cfg = TrainConfig {
            patience: 0,
            max_epochs: 500,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let r = train(&mut model, &ex, &[], &cfg, 1).unwrap();
        assert!(r.train.mad < 0.01, "train MAD {}", r.train.mad);
        assert!(r.final_train_loss <= r.initial_train_loss);
    }

    #[test]
    fn early_stop_after_patience() {
        let mut model = AssessModel::from_spec(&tiny_spec()).unwrap();
        let ex = examples(6);
        // validation targets the model cannot fit keep the monitor flat
        let cfg = TrainConfig {
            patience: 3,
            max_epochs: 200,
            ..Default::default()
        };
        let r = train(&mut model, &ex[..4], &ex[4..], &cfg, 2).unwrap();
        if r.stopped_early {
            assert_eq!(r.epochs, r.best_epoch + cfg.patience);
        } else {
            assert_eq!(r.epochs, cfg.max_epochs);
        }
    }

    #[test]
    fn multi_run_mean_is_mean_of_runs() {
        let ex = examples(6);
        let cfg = TrainConfig {
            runs: 3,
            max_epochs: 5,
            ..Default::default()
        };
        let (report, models) = train_runs(&tiny_spec(), &ex[..4], &ex[4..], &cfg, 0).unwrap();
        assert_eq!(models.len(), 3);
        let mads: Vec<f64> = report.completed().map(RunReport::mad).collect();
        assert!((report.mean_mad - mads.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!(report.loss_curves_csv().lines().count() > 1);
    }

    #[test]
    fn out_of_range_targets_are_rejected() {
        let mut model = AssessModel::from_spec(&tiny_spec()).unwrap();
        let mut ex = examples(3);
        ex[0].target = 1.5;
        assert!(matches!(
            train(&mut model, &ex, &[], &TrainConfig::default(), 0),
            Err(Error::Domain(_))
        ));
    }
}

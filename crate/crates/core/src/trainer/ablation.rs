use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{train_runs, Example, TrainConfig};
use crate::assessnet::{BaselineKind, ModelConfig, ModelSpec};
use crate::error::{Error, Result};

/// A model variant compared in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoBranches,
    NoPyramids,
    NoHierarchy,
    NoRecurrent,
    DeepCnn,
    DeepLstm,
}

impl Variant {
    pub const ABLATIONS: [Variant; 5] = [
        Variant::Full,
        Variant::NoBranches,
        Variant::NoPyramids,
        Variant::NoHierarchy,
        Variant::NoRecurrent,
    ];

    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoBranches,
        Variant::NoPyramids,
        Variant::NoHierarchy,
        Variant::NoRecurrent,
        Variant::DeepCnn,
        Variant::DeepLstm,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBranches => "no_branches",
            Variant::NoPyramids => "no_pyramids",
            Variant::NoHierarchy => "no_hierarchy",
            Variant::NoRecurrent => "no_recurrent",
            Variant::DeepCnn => "deep_cnn",
            Variant::DeepLstm => "deep_lstm",
        }
    }

    pub fn spec(self, base: &ModelConfig) -> ModelSpec {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoBranches => c.use_branches = false,
            Variant::NoPyramids => c.use_pyramids = false,
            Variant::NoHierarchy => c.use_hierarchy = false,
            Variant::NoRecurrent => c.use_recurrent = false,
            Variant::DeepCnn | Variant::DeepLstm => {
                let kind = if self == Variant::DeepCnn {
                    BaselineKind::DeepCnn
                } else {
                    BaselineKind::DeepLstm
                };
                return ModelSpec::Baseline {
                    kind,
                    input_dim: base.input_dim,
                    canonical_t: base.canonical_t,
                    seed: base.seed,
                };
            }
        }
        ModelSpec::SpatioTemporal(c)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// Mean MAD per variant for one exercise; failed cells carry the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub exercise: String,
    pub mean_mad: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub variants: Vec<Variant>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Unweighted mean over exercises per variant; `None` if any exercise
    /// failed for that variant.
    pub fn aggregate(&self) -> Vec<Option<f64>> {
        (0..self.variants.len())
            .map(|k| {
                let vals: Option<Vec<f64>> = self.rows.iter().map(|r| r.mean_mad[k]).collect();
                vals.filter(|v| !v.is_empty())
                    .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    pub fn column(&self, v: Variant) -> Option<usize> {
        self.variants.iter().position(|x| *x == v)
    }

    /// Aggregate row `all` first, then one row per exercise; MADs to five
    /// decimals, `--` for failed cells.
    pub fn to_csv(&self) -> String {
        let fmt = |c: &Option<f64>| c.map_or("--".to_string(), |v| format!("{v:.5}"));
        let mut out = String::from("exercise");
        for v in &self.variants {
            out.push(',');
            out.push_str(v.short_name());
        }
        out.push('\n');
        let mut line = |name: &str, cells: &[Option<f64>]| {
            out.push_str(name);
            for c in cells {
                out.push(',');
                out.push_str(&fmt(c));
            }
            out.push('\n');
        };
        line("all", &self.aggregate());
        for r in &self.rows {
            line(&r.exercise, &r.mean_mad);
        }
        out
    }
}

/// Trains every variant on the same split with the same run seeds.
/// Failures are recorded per cell and the sweep continues.
pub fn ablation_sweep(
    exercise: &str,
    train: &[Example],
    val: &[Example],
    base: &ModelConfig,
    variants: &[Variant],
    cfg: &TrainConfig,
    seed: u64,
) -> AblationRow {
    let mut mean_mad = Vec::with_capacity(variants.len());
    let mut errors = Vec::with_capacity(variants.len());
    for v in variants {
        log::info!("exercise {exercise}: training variant {v}");
        match train_runs(&v.spec(base), train, val, cfg, seed) {
            Ok((report, _)) => {
                mean_mad.push(Some(report.mean_mad));
                errors.push(None);
            }
            Err(e) => {
                log::warn!("exercise {exercise}: variant {v} failed: {e}");
                mean_mad.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    AblationRow {
        exercise: exercise.to_string(),
        mean_mad,
        errors,
    }
}

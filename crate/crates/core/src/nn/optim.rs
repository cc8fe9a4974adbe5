use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore, TensorRecord};
use super::Mat;

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    #[serde(skip)]
    m: Vec<Mat>,
    #[serde(skip)]
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Sets the bias-correction step counter, when resuming from a checkpoint.
    pub fn set_steps(&mut self, step: u64) {
        self.step = step;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        if self.m.is_empty() {
            self.m = store.values().iter().map(|p| Mat::zeros(p.dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        for (id, g) in grads.iter() {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }

    /// First and second moment estimates, for checkpointing.
    pub fn moments(&self) -> (Vec<TensorRecord>, Vec<TensorRecord>) {
        let rec = |ms: &[Mat], tag: &str| {
            ms.iter()
                .enumerate()
                .map(|(i, m)| TensorRecord::new(&format!("{tag}{i}"), m))
                .collect()
        };
        (rec(&self.m, "m"), rec(&self.v, "v"))
    }

    pub fn restore_moments(&mut self, m: &[TensorRecord], v: &[TensorRecord]) -> Result<(), String> {
        if m.len() != v.len() {
            return Err(format!("{} first moments but {} second moments", m.len(), v.len()));
        }
        self.m = m.iter().map(TensorRecord::to_mat).collect::<Result<_, _>>()?;
        self.v = v.iter().map(TensorRecord::to_mat).collect::<Result<_, _>>()?;
        Ok(())
    }
}

//! Adam with bias correction and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl AdamState {
    /// Zeroed moment buffers for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize], lr: f64, cfg: AdamConfig) -> Self {
        Self {
            step_count: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            lr,
        }
    }

    /// One Adam update of `params` by `grads`, paired by position.
    ///
    /// Every gradient is checked before anything is modified, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[(String, &[f64])]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::mismatch("optimizer tensor count", self.m.len(), grads.len()));
        }
        for (k, (name, g)) in grads.iter().enumerate() {
            if g.len() != self.m[k].len() || params[k].len() != self.m[k].len() {
                return Err(Error::mismatch(format!("tensor '{name}'"), self.m[k].len(), g.len()));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (_, g)) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, &gi) in g.iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[k][i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            patience: 10,
            factor: 0.01,
            min_delta: 1e-6,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::InvalidConfig("scheduler patience must be >= 1".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scheduler factor must lie in (0, 1), got {}",
                self.factor
            )));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig("scheduler min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved for `patience` consecutive observations.
///
/// The first observation only sets the baseline and counts as a
/// non-improving epoch, so a constant loss triggers the first reduction at
/// epoch `patience`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub initial_lr: f64,
    pub best_val: Option<f64>,
    pub epochs_since_improve: usize,
    pub reductions: u32,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, cfg: SchedulerConfig) -> Self {
        Self {
            patience: cfg.patience,
            factor: cfg.factor,
            min_delta: cfg.min_delta,
            initial_lr,
            best_val: None,
            epochs_since_improve: 0,
            reductions: 0,
        }
    }

    /// `initial_lr * factor^reductions`.
    pub fn lr(&self) -> f64 {
        self.initial_lr * self.factor.powi(self.reductions as i32)
    }

    /// Records one epoch's validation loss; returns whether the learning rate changed.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        match self.best_val {
            Some(best) if val_loss < best - self.min_delta => {
                self.best_val = Some(val_loss);
                self.epochs_since_improve = 0;
                return false;
            }
            Some(_) => self.epochs_since_improve += 1,
            None => {
                self.best_val = Some(val_loss);
                self.epochs_since_improve = 1;
            }
        }
        if self.epochs_since_improve >= self.patience {
            self.reductions += 1;
            self.epochs_since_improve = 0;
            true
        } else {
            false
        }
    }
}

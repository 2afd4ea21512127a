//! First-order optimizers and learning-rate schedules.
//!
//! Gradients handed to [`OptimizerState::step`] are already averaged over the
//! mini-batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Amsgrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Amsgrad,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn of(kind: OptimizerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::domain("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Moment buffers for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    v_hat: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Result<Self> {
        config.validate()?;
        let buf = if config.kind == OptimizerKind::Sgd { 0 } else { len };
        Ok(Self {
            config,
            m: vec![0.0; buf],
            v: vec![0.0; buf],
            v_hat: vec![0.0; if config.kind == OptimizerKind::Amsgrad { len } else { 0 }],
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Running maximum of the second moment (AMSGrad only; empty otherwise).
    pub fn max_second_moment(&self) -> &[f64] {
        &self.v_hat
    }

    /// Applies one update in place.
    ///
    /// * SGD: `w ← w − η g`
    /// * Adam: bias-corrected moments, `w ← w − η m̂ / (√v̂ + ε)`
    /// * AMSGrad: `v̂ ← max(v̂, v)`, `w ← w − η m / (√v̂ + ε)`, no bias correction
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradient entries",
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient entry {i}"),
                record: None,
            });
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::domain(format!("learning rate {lr} must be positive")));
        }
        let OptimizerConfig {
            kind,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        if kind != OptimizerKind::Sgd && self.m.len() != params.len() {
            return Err(Error::Shape("optimizer state sized for a different vector".into()));
        }
        self.steps += 1;
        match kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.iter_mut().zip(grads) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, (w, &g)) in params.iter_mut().zip(grads).enumerate() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            OptimizerKind::Amsgrad => {
                for (i, (w, &g)) in params.iter_mut().zip(grads).enumerate() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    self.v_hat[i] = self.v_hat[i].max(self.v[i]);
                    *w -= lr * self.m[i] / (self.v_hat[i].sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule, evaluated once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    /// `η₀ · factor^⌊epoch / period⌋`
    StepDecay {
        initial_lr: f64,
        factor: f64,
        period: usize,
    },
    /// Multiply by `factor` after `patience` epochs without improvement of the
    /// monitored loss, or stop training instead when `terminate` is set.
    Plateau {
        initial_lr: f64,
        patience: usize,
        factor: f64,
        #[serde(default)]
        terminate: bool,
    },
}

impl Schedule {
    pub fn initial_lr(&self) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::StepDecay { initial_lr, .. } | Schedule::Plateau { initial_lr, .. } => initial_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.initial_lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::domain(format!("learning rate {lr} must be positive")));
        }
        match *self {
            Schedule::Constant { .. } => {}
            Schedule::StepDecay { factor, period, .. } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::domain("decay factor must lie in (0, 1]"));
                }
                if period == 0 {
                    return Err(Error::domain("decay period must be at least one epoch"));
                }
            }
            Schedule::Plateau {
                patience, factor, ..
            } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::domain("decay factor must lie in (0, 1]"));
                }
                if patience == 0 {
                    return Err(Error::domain("patience must be at least one epoch"));
                }
            }
        }
        Ok(())
    }

    /// Whether the schedule reacts to a monitored loss.
    pub fn monitors_loss(&self) -> bool {
        matches!(self, Schedule::Plateau { .. })
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr(&self, epoch: usize, plateau: &PlateauState) -> f64 {
        let lr = match *self {
            Schedule::Constant { lr } => lr,
            Schedule::StepDecay {
                initial_lr,
                factor,
                period,
            } => {
                let k = i32::try_from(epoch / period.max(1)).unwrap_or(i32::MAX);
                initial_lr * factor.powi(k)
            }
            Schedule::Plateau { initial_lr, .. } => initial_lr * plateau.scale,
        };
        lr.max(f64::MIN_POSITIVE)
    }
}

/// Bookkeeping for plateau schedules; inert for the others.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    best: f64,
    stale: usize,
    scale: f64,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            scale: 1.0,
        }
    }
}

impl PlateauState {
    /// Records the monitored loss at the end of an epoch. Returns `true` when
    /// training should stop.
    pub fn observe(&mut self, schedule: &Schedule, loss: f64) -> bool {
        let Schedule::Plateau {
            patience,
            factor,
            terminate,
            ..
        } = *schedule
        else {
            return false;
        };
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.stale < patience {
            return false;
        }
        if terminate {
            return true;
        }
        self.scale *= factor;
        self.stale = 0;
        false
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

//! Stochastic gradient descent with classic (Polyak) or Nesterov momentum.
//!
//! Classic:   v <- mu*v + grad;  w <- w - alpha*v
//! Nesterov:  v <- mu*v + grad;  w <- w - alpha*(grad + mu*v)

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::registry::SharedRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumKind {
    Classic,
    Nesterov,
}

impl MomentumKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(MomentumKind::Classic),
            "nesterov" => Ok(MomentumKind::Nesterov),
            other => Err(Error::Config(format!("unknown momentum kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MomentumKind::Classic => "classic",
            MomentumKind::Nesterov => "nesterov",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub momentum_kind: MomentumKind,
    /// Inclusive range of class sizes drawn once per batch.
    pub shot_range: (usize, usize),
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 128,
            momentum_kind: MomentumKind::Classic,
            shot_range: (2, 5),
            steps: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let (lo, hi) = self.shot_range;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!(
                "shot_range must satisfy 2 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Per-parameter velocity buffers, shape-matched to the registry. Entries are
/// created on first use so a state made before assembly stays valid.
#[derive(Debug, Default)]
pub struct OptState {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl OptState {
    pub fn new() -> Self {
        OptState::default()
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(|v| v.as_slice())
    }

    fn slot(&mut self, name: &str, len: usize) -> Result<&mut [f64]> {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len]);
        if v.len() != len {
            return Err(Error::StateShapeDrift {
                name: name.to_string(),
                registry: len,
                state: v.len(),
            });
        }
        Ok(v.as_mut_slice())
    }
}

/// Classic momentum update over every registered parameter, consuming the
/// gradients currently stored in the registry.
pub fn momentum_step(
    registry: &SharedRegistry,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    step_impl(registry, state, cfg, MomentumKind::Classic)
}

/// Nesterov momentum update (lookahead form).
pub fn nesterov_step(
    registry: &SharedRegistry,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    step_impl(registry, state, cfg, MomentumKind::Nesterov)
}

fn step_impl(
    registry: &SharedRegistry,
    state: &mut OptState,
    cfg: &TrainConfig,
    kind: MomentumKind,
) -> Result<()> {
    let alpha = cfg.learning_rate;
    let mu = cfg.momentum;
    let mut reg = registry.write();
    let mut drift: Option<Error> = None;
    reg.for_each_param_mut(|name, value, grad| {
        if drift.is_some() {
            return;
        }
        let v = match state.slot(name, value.len()) {
            Ok(v) => v,
            Err(e) => {
                drift = Some(e);
                return;
            }
        };
        match kind {
            MomentumKind::Classic => {
                for ((w, g), vi) in value.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *vi = mu * *vi + g;
                    *w -= alpha * *vi;
                }
            }
            MomentumKind::Nesterov => {
                for ((w, g), vi) in value.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *vi = mu * *vi + g;
                    *w -= alpha * (g + mu * *vi);
                }
            }
        }
    });
    match drift {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

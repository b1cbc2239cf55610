use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
}

fn default_momentum() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("optimizer.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optimizer.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// `g ← g + wd·p`, `v ← βv + g`, `p ← p − ηv`.
pub fn momentum_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], opt: &OptimizerConfig) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + opt.weight_decay * *p;
        *v = opt.momentum * *v + g;
        *p -= opt.learning_rate * *v;
    }
}

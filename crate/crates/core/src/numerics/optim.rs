use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StepRule {
    /// Plain gradient step `theta -= rate * g`.
    Sgd { rate: f64 },
    /// Adaptive-moment step with bias correction.
    Adam {
        rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Adam {
            rate: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl StepRule {
    pub fn rate(&self) -> f64 {
        match *self {
            StepRule::Sgd { rate } | StepRule::Adam { rate, .. } => rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate() > 0.0 && self.rate().is_finite()) {
            return Err(Error::validation("optimizer.rate", format!("must be positive, got {}", self.rate())));
        }
        if let StepRule::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::validation("optimizer.beta", "betas must lie in [0, 1)"));
            }
            if !(eps > 0.0) {
                return Err(Error::validation("optimizer.eps", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Optimizer state; moment vectors are empty for plain steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub rule: StepRule,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl Optimizer {
    pub fn new(rule: StepRule, len: usize) -> Self {
        let moments = match rule {
            StepRule::Sgd { .. } => 0,
            StepRule::Adam { .. } => len,
        };
        Optimizer {
            rule,
            step: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.step += 1;
        match self.rule {
            StepRule::Sgd { rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= rate * g;
                }
            }
            StepRule::Adam { rate, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    params[i] -= rate * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
    }
}

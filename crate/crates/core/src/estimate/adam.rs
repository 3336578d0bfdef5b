use serde::{Deserialize, Serialize};

use super::objective::Evaluation;
use super::{OptimResult, Termination};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("adam learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("adam moment parameters out of range".into()));
        }
        Ok(())
    }
}

/// ADAM with bias-corrected moments, returning the best iterate seen.
///
/// A penalized evaluation sends the iterate back to the best point so far,
/// clears the first moment and halves the step size.
pub fn adam_minimize<F>(mut f: F, x0: &[f64], cfg: &AdamConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<Evaluation>,
{
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let first = f(&x, &mut g)?;
    if !first.cost.is_finite() {
        return Err(Error::Optimizer(format!("non-finite cost at the starting point: {}", first.cost)));
    }
    let mut penalized = usize::from(first.penalized);
    let mut best = (first.cost, x.clone(), g.clone());
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(first.cost);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut lr = cfg.learning_rate;
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for _ in 0..cfg.iterations {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            x[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
        let e = f(&x, &mut g)?;
        if e.penalized || !e.cost.is_finite() {
            penalized += 1;
            x.copy_from_slice(&best.1);
            g.copy_from_slice(&best.2);
            m.iter_mut().for_each(|v| *v = 0.0);
            lr *= 0.5;
        } else if e.cost < best.0 {
            best.0 = e.cost;
            best.1.copy_from_slice(&x);
            best.2.copy_from_slice(&g);
        }
        trace.push(best.0);
    }
    Ok(OptimResult {
        x: best.1,
        cost: best.0,
        iterations: cfg.iterations,
        evaluations: cfg.iterations + 1,
        penalized_evaluations: penalized,
        termination: Termination::MaxIterations,
        trace,
    })
}

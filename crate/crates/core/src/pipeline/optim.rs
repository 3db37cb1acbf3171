use std::f64::consts::PI;

use super::{LossReport, StageConfig};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Cosine-decayed step size at iteration `t` of `total`.
pub fn cosine_lr(base: f64, t: usize, total: usize, cosine: bool) -> f64 {
    if !cosine || total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())
}

/// First- and second-moment gradient descent.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update with step size `lr`, scaled per parameter by `lr_scale`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, lr_scale: Option<&[f64]>) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            let s = lr_scale.map_or(1.0, |s| s[i]);
            params[i] -= lr * s * step;
        }
    }
}

/// Renormalizes the 4-blocks starting at each offset.
pub fn renormalize_quaternions(params: &mut [f64], offsets: &[usize]) {
    for &o in offsets {
        let q = &mut params[o..o + 4];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            q.iter_mut().for_each(|x| *x /= n);
        } else {
            q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
    }
}

/// Runs `config.iterations` Adam steps on `params`. `objective` returns the loss
/// report and the gradient; the trace holds the report of every iteration,
/// evaluated before its update.
pub fn optimize(
    params: &mut [f64],
    quat_offsets: &[usize],
    config: &StageConfig,
    lr_scale: Option<&[f64]>,
    mut objective: impl FnMut(&[f64], usize) -> Result<(LossReport, Vec<f64>)>,
) -> Result<Vec<LossReport>> {
    if let Some(s) = lr_scale {
        if s.len() != params.len() {
            return Err(Error::dim("learning-rate scales", params.len(), s.len()));
        }
    }
    let mut adam = Adam::new(params.len());
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (report, grad) = objective(params, it)?;
        report.check_finite()?;
        if grad.len() != params.len() {
            return Err(Error::dim("gradient", params.len(), grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { term: "gradient".into() });
        }
        let lr = cosine_lr(config.lr, it, config.iterations, config.cosine);
        adam.step(params, &grad, lr, lr_scale);
        renormalize_quaternions(params, quat_offsets);
        trace.push(report);
    }
    Ok(trace)
}

//! Adam over a flat parameter vector, plus the learning-rate and fairness schedules.

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Cosine annealing from `lr_init` at step 0 to `lr_final` at step `total`.
pub fn cosine_lr(step: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let s = (step.min(total) as f64) / total as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (PI * s).cos())
}

/// Fairness multiplier: 1 until `start`, then log-linear down to `floor`
/// over `span` iterations, then held.
pub fn fair_scale(iteration: usize, start: usize, span: usize, floor: f64) -> f64 {
    if iteration < start {
        return 1.0;
    }
    let s = if span == 0 {
        1.0
    } else {
        ((iteration - start) as f64 / span as f64).min(1.0)
    };
    floor.powf(s)
}

use std::f64::consts::PI;

/// Heavy-ball SGD: `v <- mu v + g`, `x <- x - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, len: usize) -> Self {
        Self { momentum, velocity: vec![0.0; len] }
    }

    pub fn with_velocity(momentum: f64, velocity: Vec<f64>) -> Self {
        Self { momentum, velocity }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        for ((x, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *x -= lr * *v;
        }
    }

    /// Updates the velocity only and returns it; for parameters that need a
    /// projection after the step.
    pub fn advance(&mut self, grad: &[f64]) -> &[f64] {
        for (v, g) in self.velocity.iter_mut().zip(grad) {
            *v = self.momentum * *v + g;
        }
        &self.velocity
    }
}

/// `base * (1 + cos(pi * step / total)) / 2`; constant when `total == 0`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

//! Adam optimizer and the exponential learning-rate schedule.

use std::collections::HashMap;

use thiserror::Error;

use crate::param::Param;
use crate::tensor::{el, Element};

#[derive(Error, Debug)]
pub enum OptimError {
    #[error("gradient length {got} does not match parameter {name} of length {want}")]
    ShapeMismatch { name: String, want: usize, got: usize },
    #[error("learning rate must be positive, got {0}")]
    BadLr(f64),
}

/// Bias-corrected Adam. Moment buffers are keyed by parameter name and
/// created lazily on first update.
#[derive(Clone, Debug)]
pub struct Adam<T: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Element> Adam<T> {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    /// Advance the shared step counter. Call once per optimization step,
    /// before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(
        &mut self,
        name: &str,
        param: &mut Param<T>,
        grad: &[T],
        lr: f64,
    ) -> Result<(), OptimError> {
        if lr <= 0.0 {
            return Err(OptimError::BadLr(lr));
        }
        if grad.len() != param.data.len() {
            return Err(OptimError::ShapeMismatch {
                name: name.to_string(),
                want: param.data.len(),
                got: grad.len(),
            });
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
        let t = self.step.max(1) as i32;
        let b1: T = el(self.beta1);
        let b2: T = el(self.beta2);
        let bc1: T = el(1.0 - self.beta1.powi(t));
        let bc2: T = el(1.0 - self.beta2.powi(t));
        let lr: T = el(lr);
        let eps: T = el(self.eps);
        let one = T::one();
        for i in 0..grad.len() {
            m[i] = b1 * m[i] + (one - b1) * grad[i];
            v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param.data[i] = param.data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// Moment buffers in sorted order, for checkpointing.
    pub fn sorted_moments(&self) -> Vec<(&String, &(Vec<T>, Vec<T>))> {
        let mut out: Vec<_> = self.moments.iter().collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn restore_moment(&mut self, name: String, m: Vec<T>, v: Vec<T>) {
        self.moments.insert(name, (m, v));
    }
}

impl<T: Element> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Exponential decay with a continuous exponent:
/// `lr(step) = initial_lr * decay_rate^(step / decay_steps)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        self.initial_lr * self.decay_rate.powf(step as f64 / self.decay_steps as f64)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { initial_lr: 1e-2, decay_steps: 100_000, decay_rate: 0.2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut adam = Adam::<f32>::new();
        let mut p = Param { data: vec![1.0, -2.0], shape: vec![2] };
        adam.begin_step();
        adam.update("p", &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p.data, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With m=v=0 and grad=1, the bias-corrected update is
        // -lr * 1 / (1 + eps') which is -lr to within eps.
        let mut adam = Adam::<f32>::new();
        let mut p = Param { data: vec![0.0], shape: vec![1] };
        adam.begin_step();
        adam.update("p", &mut p, &[1.0], 0.01).unwrap();
        assert!((p.data[0] + 0.01).abs() < 1e-4, "{}", p.data[0]);
    }

    #[test]
    fn constant_grad_moves_monotonically() {
        let mut adam = Adam::<f64>::new();
        let mut p = Param { data: vec![0.5], shape: vec![1] };
        let mut prev = p.data[0];
        for _ in 0..100 {
            adam.begin_step();
            adam.update("p", &mut p, &[1.0], 0.01).unwrap();
            assert!(p.data[0] < prev);
            prev = p.data[0];
        }
    }

    #[test]
    fn grad_shape_mismatch() {
        let mut adam = Adam::<f32>::new();
        let mut p = Param { data: vec![0.0; 3], shape: vec![3] };
        adam.begin_step();
        assert!(adam.update("p", &mut p, &[1.0], 0.01).is_err());
    }

    #[test]
    fn lr_schedule_paper_defaults() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 1e-2);
        assert!((s.lr_at(100_000) - 2e-3).abs() < 1e-12);
        assert!((s.lr_at(200_000) - 4e-4).abs() < 1e-12);
    }
}

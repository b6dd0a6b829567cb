//! Adaptive-moment optimizer with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Moments sized after `shapes` (element count per tensor).
    pub fn new(shapes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every tensor; `lrs[i]` is the learning rate of tensor `i`.
    /// Non-finite gradients abort before anything is modified.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lrs: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.first.len(), "tensor count changed");
        assert_eq!(grads.len(), params.len());
        assert_eq!(lrs.len(), params.len());
        for (i, g) in grads.iter().enumerate() {
            assert_eq!(g.len(), params[i].len(), "gradient {i} shape mismatch");
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in tensor {i} at element {pos}: {}",
                    g[pos]
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let lr = lrs[i];
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                let g = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * self.weight_decay * p[j];
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut opt = OptimizerState::new(&[3], 0.0);
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]], &[0.1]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = OptimizerState::new(&[1], 0.0);
        let mut p = vec![0.0];
        opt.step(&mut [&mut p], &[&[1.0]], &[1e-3]).unwrap();
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn groups_use_their_own_rate() {
        let mut opt = OptimizerState::new(&[2, 2], 0.0);
        let mut a = vec![0.0, 0.0];
        let mut b = vec![0.0, 0.0];
        for _ in 0..5 {
            opt.step(&mut [&mut a, &mut b], &[&[1.0, -0.5], &[1.0, -0.5]], &[1e-5, 1e-3]).unwrap();
        }
        for j in 0..2 {
            assert!((b[j] / a[j] - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut opt = OptimizerState::new(&[1], 0.5);
        let mut p = vec![2.0];
        opt.step(&mut [&mut p], &[&[0.0]], &[0.1]).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut opt = OptimizerState::new(&[2], 0.0);
        let mut p = vec![1.0, 1.0];
        assert!(opt.step(&mut [&mut p], &[&[f64::NAN, 0.0]], &[0.1]).is_err());
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(opt.step, 0);
    }
}

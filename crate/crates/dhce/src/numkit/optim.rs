//! Adam with bias correction over flat slices of parameter tensors.

use serde::{Deserialize, Serialize};

use super::tensor::{NumError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self { cfg, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update, in place. `grads` must align with `params`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NumError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NumError::Invalid(format!(
                "adam_step: {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = self.cfg.beta1 * m.data()[i] + (1.0 - self.cfg.beta1) * gi;
                let vi = self.cfg.beta2 * v.data()[i] + (1.0 - self.cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                p.data_mut()[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap()];
        let grads = vec![Tensor::zeros(1, 2)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let before = params.clone();
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // With fresh moments, m_hat / sqrt(v_hat) = sign(g), so the first
        // update magnitude is lr up to the eps term.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::from_rows(&[vec![0.0, 5.0]]).unwrap()];
        let grads = vec![Tensor::from_rows(&[vec![3.0, -0.7]]).unwrap()];
        let mut state = AdamState::new(cfg, &params);
        state.step(&mut params, &grads).unwrap();
        assert!((params[0].get(0, 0) - (-0.1)).abs() < 1e-6);
        assert!((params[0].get(0, 1) - 5.1).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params = vec![Tensor::from_rows(&[vec![0.3, -0.8], vec![1.5, 0.0]]).unwrap()];
            let grads = vec![Tensor::from_rows(&[vec![0.11, -2.0], vec![0.0, 0.5]]).unwrap()];
            let mut state = AdamState::new(AdamConfig::default(), &params);
            for _ in 0..10 {
                state.step(&mut params, &grads).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let grads = vec![Tensor::zeros(1, 2)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(state.step(&mut params, &grads).is_err());
    }
}

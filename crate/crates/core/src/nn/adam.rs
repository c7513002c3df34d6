use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment estimates for one ordered list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        self.step_refs(params.iter_mut().collect(), grads)
    }

    /// [`Self::step`] over parameters that are not stored contiguously.
    pub fn step_refs(&mut self, mut params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::contract(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            let p: &Tensor<T> = p;
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = T::from_f64_lossy(c.learning_rate * bc2.sqrt() / bc1);
        let eps_hat = T::from_f64_lossy(c.eps * bc2.sqrt());
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                // Equivalent to lr * m_hat / (sqrt(v_hat) + eps).
                *p -= step_size * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::<f64>::from_f64(&[2], &[1.0, -3.0]).unwrap()];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p[0].data(), &[1.0, -3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, -7.0, 250.0] {
            let mut p = vec![Tensor::<f64>::zeros(&[1])];
            let mut s = AdamState::new(AdamConfig::with_learning_rate(0.01), &p);
            s.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let delta = p[0].data()[0].abs();
            assert!((delta - 0.01).abs() / 0.01 < 0.01, "g={g}: {delta}");
            assert_eq!(p[0].data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn descends_a_parabola() {
        // f(x) = x^2 from x = 1 with lr 0.1.
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut s = AdamState::new(AdamConfig::with_learning_rate(0.1), &p);
        let mut prev = 1.0;
        // Textbook scalar recurrence as the oracle.
        let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=2 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            let g = Tensor::scalar(2.0 * p[0].data()[0]);
            s.step(&mut p, &[g]).unwrap();
            let got = p[0].data()[0];
            assert!(got * got < prev * prev);
            assert!((got - x).abs() < 1e-12, "{got} vs {x}");
            prev = got;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(s.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{AmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of every non-frozen parameter.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &ParamGrads<F>) -> Result<()> {
        if grads.grads.len() != store.len() || self.m.len() != store.len() {
            return Err(AmnError::InvalidArgument(format!(
                "adam_step: {} gradients for {} parameters",
                grads.grads.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            let g = grads.get(id);
            if g.shape() != store.get(id).shape() {
                return Err(AmnError::shape(
                    "adam_step",
                    store.get(id).shape(),
                    g.shape(),
                ));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let lr = F::c(c.lr);
        let eps = F::c(c.eps);
        let bc1 = F::one() - F::c(c.beta1.powi(self.t as i32));
        let bc2 = F::one() - F::c(c.beta2.powi(self.t as i32));
        for id in store.ids() {
            if store.entry(id).frozen {
                continue;
            }
            let i = id.index();
            let g = grads.get(id).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (F::one() - b1) * g[j];
                v[j] = b2 * v[j] + (F::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w), false);
        s
    }

    fn grad(g: f64) -> ParamGrads<f64> {
        ParamGrads {
            grads: vec![Tensor::scalar(g)],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = single(1.5);
        let mut st = AdamState::new(&s, AdamConfig::default());
        st.step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).item(), 1.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let mut s = single(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&s, cfg);
        st.step(&mut s, &grad(1.0)).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.get(s.find("w").unwrap()).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_calls() {
        let run = || {
            let mut s = single(0.3);
            let mut st = AdamState::new(&s, AdamConfig::default());
            for g in [0.5, -0.2, 1.0] {
                st.step(&mut s, &grad(g)).unwrap();
            }
            s.get(s.find("w").unwrap()).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParamStore::new();
        s.add("k", Tensor::scalar(2.0f64), true);
        let mut st = AdamState::new(&s, AdamConfig::default());
        st.step(&mut s, &grad(3.0)).unwrap();
        assert_eq!(s.get(s.find("k").unwrap()).item(), 2.0);
    }

    #[test]
    fn rejects_mismatched_gradient_shape() {
        let mut s = single(1.0);
        let mut st = AdamState::new(&s, AdamConfig::default());
        let bad = ParamGrads {
            grads: vec![Tensor::zeros(&[2])],
        };
        assert!(st.step(&mut s, &bad).is_err());
    }
}

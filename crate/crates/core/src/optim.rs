//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// One update of every parameter; `params` and `grads` pair up with the
    /// tensors the state was created from.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "adam_step",
                format!(
                    "state tracks {} tensors, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            p.check_same_shape("adam_step", g)?;
            p.check_same_shape("adam_step", m)?;
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> Tensor {
        Tensor::full(&[2, 2], value)
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = one_param(1.5);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[2, 2])]).unwrap();
        assert_eq!(p, one_param(1.5));
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+ε) ≈ lr·sign(g).
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        for g in [0.5, -3.0, 1e-2] {
            let mut p = one_param(0.0);
            let mut st = AdamState::new(cfg, [&p]);
            st.step(&mut [&mut p], &[Tensor::full(&[2, 2], g)]).unwrap();
            let expected = -cfg.lr * g / (g.abs() + cfg.epsilon);
            for &v in p.data() {
                assert!((v - expected).abs() < 1e-15);
                assert!((v.abs() - cfg.lr).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut p = one_param(2.0);
        let mut st = AdamState::new(cfg, [&p]);
        for _ in 0..3 {
            st.step(&mut [&mut p], &[Tensor::full(&[2, 2], 0.7)]).unwrap();
        }
        assert_eq!(p, one_param(2.0));
        assert_eq!(st.step_count(), 3);
        assert!(st.second_moment()[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = one_param(0.0);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        assert!(st.step(&mut [&mut p], &[Tensor::zeros(&[4])]).is_err());
        assert!(st.step(&mut [], &[]).is_err());
    }
}

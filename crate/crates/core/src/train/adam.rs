use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("adam eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, visiting tensors in checkpoint order.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (ob1, ob2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step = T::from_f64(lr / c1);
    let inv_c2 = T::from_f64(1.0 / c2);
    let eps = T::from_f64(cfg.eps);
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + ob1 * g;
            *v = b2 * *v + ob2 * g * g;
            *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dense, ModelParams};
    use crate::tensor::Tensor;

    fn scalar_params(x: f64) -> ModelParams {
        ModelParams {
            first: vec![Dense {
                weight: Tensor::from_vec(vec![1, 1], vec![x]).unwrap(),
                bias: Tensor::from_vec(vec![1], vec![0.0]).unwrap(),
            }],
            trunk: vec![],
            tail: vec![],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(1.5);
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        s.m.first[0].weight.data_mut()[0] = 0.2;
        adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default());
        // The moment decays, so a stale momentum still moves the parameter;
        // with fresh state nothing moves.
        assert!((s.m.first[0].weight.data()[0] - 0.18).abs() < 1e-15);
        let mut p2 = scalar_params(1.5);
        let mut s2 = AdamState::new(&p2);
        adam_step(&mut p2, &g, &mut s2, 0.1, &AdamConfig::default());
        assert_eq!(p2, scalar_params(1.5));
    }

    #[test]
    fn three_step_scalar_trace() {
        // Hand-stepped oracle for gradients 0.5, -0.25, 1.0.
        let (lr, b1, b2, eps) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64);
        let gs = [0.5, -0.25, 1.0];
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        for (k, &g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            let mut grads = p.zeros_like();
            grads.first[0].weight.data_mut()[0] = g;
            adam_step(&mut p, &grads, &mut s, lr, &cfg);
            assert!((p.first[0].weight.data()[0] - x).abs() < 1e-15);
        }
        // First step moves by about lr·sign(g).
        assert!((1.0 - 0.01 - (1.0 - lr * 0.5 / (0.5 + eps))).abs() < 1e-9);
    }
}

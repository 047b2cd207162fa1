use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Coupled L2 penalty: `l2 * param` is added to the gradient before the moment update.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            l2: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = |p: &Tensor<T>| Tensor::zeros(p.shape().to_vec());
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Length(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powf(t));
    let bc2 = T::of(1.0 - c.beta2.powf(t));
    let (lr, l2, eps) = (T::of(c.lr), T::of(c.l2), T::of(c.eps));
    let one = T::one();

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let grad = gv + l2 * *pv;
            *mv = b1 * *mv + (one - b1) * grad;
            *vv = b2 * *vv + (one - b2) * grad * grad;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

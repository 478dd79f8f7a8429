//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::params::ParameterSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates for one model. `m` and `v` mirror the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(config: AdamWConfig, params: &ParameterSet<T>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Clears both moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m = self.m.zeros_like();
        self.v = self.v.zeros_like();
    }

    /// One update:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
    /// θ ← θ − lr·( m̂/(√v̂ + ε) + wd·θ )
    /// ```
    ///
    /// The decay term uses θ before the update and never enters the moments.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        params.check_layout(grads, "adamw_step")?;
        params.check_layout(&self.m, "adamw_step")?;

        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let wd = T::lit(c.weight_decay);
        let step = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = one - b1.powi(step);
        let bc2 = one - b2.powi(step);

        for idx in 0..params.len() {
            let g = grads.tensor(idx).as_slice();
            let m = self.m.tensor_mut(idx).as_mut_slice();
            let v = self.v.tensor_mut(idx).as_mut_slice();
            let theta = params.tensor_mut(idx).as_mut_slice();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] = theta[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
            }
        }
        Ok(())
    }
}

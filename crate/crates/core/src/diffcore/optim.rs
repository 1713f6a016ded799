use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Hyperparameters of SGD with heavy-ball momentum and L2 weight decay.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it makes a run a no-op, which tests rely on.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum {} not in [0,1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid(format!("weight decay {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Optimizer state: one velocity buffer per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f64> {
    pub config: SgdConfig,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: SgdConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// `v ← μ·v + g + wd·θ; θ ← θ − lr·v`.
    ///
    /// With a mask, coordinates whose flag is `false` are skipped entirely:
    /// neither their velocity nor their value changes.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], mask: Option<&[Vec<bool>]>) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(invalid(format!(
                "sgd_step: {} params, {} grads, {} velocities",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        let lr = T::lit(self.config.learning_rate);
        let mu = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()).enumerate() {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m = mask.map(|m| &m[i]);
            let pd = p.data_mut();
            for (j, ((theta, &grad), vel)) in pd.iter_mut().zip(g.data()).zip(v.data_mut().iter_mut()).enumerate() {
                if m.is_some_and(|m| !m[j]) {
                    continue;
                }
                *vel = mu * *vel + grad + wd * *theta;
                *theta = *theta - lr * *vel;
            }
        }
        Ok(())
    }
}

/// One SGD step on freshly initialised state, for callers without a loop.
pub fn sgd_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut OptimizerState<T>) -> Result<()> {
    state.step(params, grads, None)
}

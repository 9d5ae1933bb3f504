use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub step: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    ///
    /// If any gradient is non-finite nothing is modified.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.iter().any(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for p in params.iter_mut() {
            let Param {
                value,
                grad,
                moment1,
                moment2,
            } = &mut **p;
            let it = value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_mut_slice())
                .zip(moment1.as_mut_slice().iter_mut().zip(moment2.as_mut_slice()));
            for ((x, g), (m, v)) in it {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x = *x * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

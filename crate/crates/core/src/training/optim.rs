use std::collections::HashMap;
use std::f64::consts::PI;

use crate::autograd::{Param, ParamId};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter holding a gradient and clears the gradients.
    /// Parameters without a gradient are left untouched.
    pub fn step<'a, T: Element + 'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Param<T>>,
        lr: f64,
    ) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Contract(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let Some(grad) = p.grad().map(|g| g.to_f64_vec()) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (((w, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = T::from_f64_lossy(w.to_f64().unwrap_or(0.0) - update);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_init - lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr_init: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::Contract(format!(
            "cosine schedule step {step} outside 0..={total}"
        )));
    }
    let phase = PI * step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_init - lr_min) * (1.0 + phase.cos()))
}

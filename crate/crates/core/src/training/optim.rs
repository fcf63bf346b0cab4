use std::f64::consts::PI;

use crate::datastore::TrainState;
use crate::error::{Error, Result};
use crate::numerics::{DType, ParamStore, Tensor};

/// `lr0 · (1 + cos(π e / E)) / 2`, reaching exactly zero at `e = E`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 || epoch >= epochs {
        return 0.0;
    }
    lr0 * (1.0 + (PI * epoch as f64 / epochs as f64).cos()) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &ParamStore| -> ParamStore {
            p.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect()
        };
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn from_state(state: &TrainState, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: state.step,
            m: state.adam_m.clone(),
            v: state.adam_v.clone(),
        }
    }

    pub fn state(&self, epoch: usize) -> TrainState {
        TrainState {
            epoch,
            step: self.step,
            adam_m: self.m.clone(),
            adam_v: self.v.clone(),
        }
    }

    /// One bias-corrected update. Parameters are stored back at `dtype`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64, dtype: DType) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Usage(format!("no gradient for parameter `{name}`")))?;
            let m = self.m.get_mut(name).ok_or_else(|| Error::Usage(format!("no optimizer state for `{name}`")))?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::Usage(format!("no optimizer state for `{name}`")))?;
            if g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::shape("adam", format!("state shapes disagree for `{name}`")));
            }
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let mut next = p.clone();
            for (((x, &gi), mi), vi) in next
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let step = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x -= step;
            }
            if !next.all_finite() {
                return Err(Error::NonFinite {
                    op: "adam",
                    scope: name.clone(),
                });
            }
            *p = next.cast(dtype);
        }
        Ok(())
    }
}

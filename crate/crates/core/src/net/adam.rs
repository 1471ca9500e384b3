//! Adaptive-moment optimizer with bias correction.

use super::layout::{round_to_f32, ParamLayout};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update. Rejects non-finite gradients before touching any state.
    /// Parameters and moments are kept f32-representable so that checkpoints
    /// resume exactly.
    pub fn update(&mut self, layout: &ParamLayout, params: &mut [f64], grads: &[f64]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(layout.name_of(i).to_string()));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + EPSILON);
        }
        round_to_f32(params);
        round_to_f32(&mut self.m);
        round_to_f32(&mut self.v);
        Ok(())
    }
}

//! AdamW with bias correction and decoupled weight decay.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{shape_err, Gradients, ParamStore, Result, Tensor};
use crate::math::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Option<Tensor<T>>>,
    pub second_moment: Vec<Option<Tensor<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        Self {
            config,
            step: 0,
            first_moment: (0..params.len()).map(|_| None).collect(),
            second_moment: (0..params.len()).map(|_| None).collect(),
        }
    }

    /// One update of every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.shape() != params.get(id).shape() {
                return Err(shape_err!(
                    "gradient {:?} for parameter `{}` {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::lit(c.lr);
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(libm::pow(c.beta1, t as f64));
        let bc2 = T::one() - T::lit(libm::pow(c.beta2, t as f64));
        let eps = T::lit(c.eps);
        for (id, g) in grads.iter() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = self.first_moment[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second_moment[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = params.get_mut(id);
            for (((p, &gi), m), v) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *p *= decay;
                *m = b1 * *m + (T::one() - b1) * gi;
                *v = b2 * *v + (T::one() - b2) * gi * gi;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

//! Adam and gradient-norm clipping.

use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float math is unavailable without std
use num_traits::Float;

use crate::tensor::pairwise_sum;
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Adam {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `frozen[i]` parameters keep their value and moments.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], frozen: &[bool]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim("Adam::step", &[self.m.len()], &[params.len(), grads.len()]));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(Error::dim("Adam::step", p.shape(), g.shape()));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// Euclidean norm over all gradient tensors.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> T {
    let per: Vec<T> = grads
        .iter()
        .map(|g| {
            let sq: Vec<T> = g.data().iter().map(|&x| x * x).collect();
            pairwise_sum(&sq)
        })
        .collect();
    pairwise_sum(&per).sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

//! AdamW with decoupled weight decay and a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T: Real = f32> {
    pub config: AdamWConfig,
    /// First moments, indexed like the parameter store.
    pub m: Vec<Tensor<T>>,
    /// Second moments.
    pub v: Vec<Tensor<T>>,
    /// Number of updates taken.
    pub t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.dims())).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Checks that restored moments line up with `store`.
    pub fn check_compatible(&self, store: &ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for ((_, p), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            if m.dims() != p.value.dims() || v.dims() != p.value.dims() {
                return Err(Error::mismatch("adamw_step", m.dims(), p.value.dims()));
            }
        }
        Ok(())
    }

    /// One update of every trainable parameter using `lr`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.check_compatible(store)?;
        if !store.grads_finite() {
            return Err(Error::Contract("adamw_step received non-finite gradients".into()));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * c.weight_decay);
        let eps = T::of(c.eps);
        for (p, (m, v)) in store.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !p.trainable {
                continue;
            }
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                if c.weight_decay != 0.0 {
                    *w *= decay;
                }
                *w -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base_lr * factor^floor(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 5e-5,
            decay_factor: 0.1,
            decay_every: 50,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        self.base_lr * self.decay_factor.powi(k as i32)
    }
}

//! Adam with an inverse-square-root learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Clip the global gradient norm to this value when set.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-3,
            warmup: 6000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            batch_size: 32,
            max_steps: 1000,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

/// Learning rate at 1-based step `s`: linear warm-up to `peak`, then `peak * sqrt(warmup / s)`.
pub fn inverse_sqrt_lr(peak: f64, warmup: usize, step: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    if s <= w {
        peak * s / w
    } else {
        peak * (w / s).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: OptimConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: OptimConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<_> = params.iter().map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { cfg, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        inverse_sqrt_lr(self.cfg.peak_lr, self.cfg.warmup, self.step.max(1))
    }

    /// One update; returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &mut Grads<T>) -> f64 {
        self.step += 1;
        if let Some(max) = self.cfg.max_grad_norm {
            let norm = grads.global_norm().as_f64();
            if norm > max {
                grads.scale(T::of(max / norm));
            }
        }
        let lr = inverse_sqrt_lr(self.cfg.peak_lr, self.cfg.warmup, self.step);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t, eps) = (T::of(b1), T::of(b2), T::of(self.cfg.eps));
        let step_size = T::of(lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1t * m[k] + (T::one() - b1t) * gk;
                v[k] = b2t * v[k] + (T::one() - b2t) * gk * gk;
                p[k] -= step_size * m[k] / (v[k].sqrt() / c2_sqrt + eps);
            }
        }
        lr
    }
}

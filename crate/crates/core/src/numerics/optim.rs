use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor2};

/// Learning-rate multiplier as a function of the 1-based step counter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    /// Linear ramp 0→1 over `warmup_steps`, then linear decay reaching 0 at
    /// `total_steps`.
    LinearWarmup { warmup_steps: u64, total_steps: u64 },
}

impl Schedule {
    pub fn multiplier(&self, t: u64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::LinearWarmup {
                warmup_steps,
                total_steps,
            } => {
                let t = t as f64;
                let ramp = if warmup_steps == 0 {
                    1.0
                } else {
                    (t / warmup_steps as f64).min(1.0)
                };
                let decay = if total_steps > warmup_steps {
                    ((total_steps as f64 - t) / (total_steps - warmup_steps) as f64).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                ramp.min(decay)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            schedule: Schedule::Constant,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept per parameter, in store
/// order; frozen parameters are never touched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let shapes: Vec<_> = store.iter().map(|(_, p)| p.value.shape()).collect();
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor2::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor2::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Learning rate applied at the most recent step.
    pub fn current_lr(&self) -> f64 {
        self.config.lr * self.config.schedule.multiplier(self.t.max(1))
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c = self.config;
        let lr = c.lr * c.schedule.multiplier(self.t);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let grad = p.grad.data();
            let theta = p.value.data_mut();
            for j in 0..theta.len() {
                let g = grad[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -= lr * c.weight_decay * theta[j];
                theta[j] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

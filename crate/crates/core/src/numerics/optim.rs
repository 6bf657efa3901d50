use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    m: GradBuffer,
    v: GradBuffer,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            m: GradBuffer::zeros_like(store),
            v: GradBuffer::zeros_like(store),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.get_mut(id).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let m = self.m.get(id).data();
            let v = self.v.get(id).data();
            let w = store.tensor_mut(id).data_mut();
            for i in 0..w.len() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum LrPolicy {
    /// `factor · d^-0.5 · min(step^-0.5, step · warmup^-1.5)`
    WarmupDecay {
        factor: f64,
        d_model: usize,
        warmup_steps: usize,
    },
    Fixed {
        lr: f64,
    },
}

impl LrPolicy {
    pub fn fixed_default() -> Self {
        LrPolicy::Fixed { lr: 0.0001 }
    }

    /// Rate for 1-based `step`.
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrPolicy::Fixed { lr } => lr,
            LrPolicy::WarmupDecay {
                factor,
                d_model,
                warmup_steps,
            } => {
                let s = step.max(1) as f64;
                let w = warmup_steps.max(1) as f64;
                factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn warmup_peaks_at_warmup_steps() {
        let p = LrPolicy::WarmupDecay {
            factor: 1.0,
            d_model: 64,
            warmup_steps: 100,
        };
        assert!(p.rate(50) < p.rate(100));
        assert!(p.rate(200) < p.rate(100));
        assert_eq!(LrPolicy::fixed_default().rate(7), 0.0001);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut store = ParamStore::new();
        let id = store
            .add("w", Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap())
            .unwrap();
        let mut grads = GradBuffer::zeros_like(&store);
        grads.add(id, &Tensor::matrix(1, 2, vec![2.0, -3.0]).unwrap());
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &grads, 0.1);
        let w = store.tensor(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }
}

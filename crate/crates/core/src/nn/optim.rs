use serde::{Deserialize, Serialize};

use super::model::{ParamGroup, ParamStore};
use super::tape::ParamGrads;
use super::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Adam with bias correction. Moments are kept in f64 and a parameter's
/// step counter only advances when it receives a gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: Vec::new(),
        }
    }

    /// Apply one update; `lr_scale` multiplies the learning rate per group.
    pub fn step<T: Float>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &ParamGrads<T>,
        lr_scale: impl Fn(ParamGroup) -> f64,
    ) {
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        for (pid, g) in &grads.grads {
            let entry = &mut params.entries[*pid];
            let len = entry.value.data.len();
            let st = self.state[*pid].get_or_insert_with(|| Moments {
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let step = lr * lr_scale(entry.group);
            for k in 0..len {
                let gk = g.data[k].to_f64_lossy();
                st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * gk;
                st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * gk * gk;
                let upd = step * (st.m[k] / c1) / ((st.v[k] / c2).sqrt() + eps);
                let w = &mut entry.value.data[k];
                *w = T::lit(w.to_f64_lossy() - upd);
            }
        }
    }
}

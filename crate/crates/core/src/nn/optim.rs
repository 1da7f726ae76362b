use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Final learning rate as a fraction of `lr` at the end of the cosine schedule.
    pub min_lr_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 5.0,
            min_lr_fraction: 0.0,
        }
    }
}

/// Cosine decay from `lr` to `lr * min_fraction` over `total` steps.
pub fn cosine_lr(lr: f64, min_fraction: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let p = (step.min(total - 1)) as f64 / (total - 1) as f64;
    let floor = lr * min_fraction;
    floor + 0.5 * (lr - floor) * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: usize,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// One update with learning rate `lr`. Returns the pre-clip gradient norm.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> f64 {
        let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
        let clip = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let p = store.value_mut(*id);
            for i in 0..g.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p.data[i]);
            }
        }
        norm
    }
}

/// Sums gradient lists from several backward passes in the given order.
pub fn accumulate(into: &mut Vec<(ParamId, Tensor)>, more: Vec<(ParamId, Tensor)>) {
    if into.is_empty() {
        *into = more;
        return;
    }
    for (id, g) in more {
        match into.binary_search_by_key(&id, |(i, _)| *i) {
            Ok(pos) => into[pos].1.add_assign(&g),
            Err(pos) => into.insert(pos, (id, g)),
        }
    }
}

pub fn scale_grads(grads: &mut [(ParamId, Tensor)], s: f64) {
    for (_, g) in grads {
        g.data.iter_mut().for_each(|x| *x *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0.0, 0, 100), 1e-3);
        assert!(cosine_lr(1e-3, 0.0, 99, 100).abs() < 1e-18);
        assert!((cosine_lr(1e-3, 0.1, 99, 100) - 1e-4).abs() < 1e-15);
        assert!((cosine_lr(1.0, 0.0, 50, 101) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(1, 2, vec![3.0, -2.0]), true);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..500 {
            let x = store.value(id).clone();
            let g = Tensor::from_vec(1, 2, x.data.iter().map(|v| 2.0 * v).collect());
            opt.update(&mut store, &[(id, g)], 0.05);
        }
        assert!(store.value(id).sq_norm() < 1e-4);
    }
}

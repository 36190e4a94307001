//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.add(
            "x",
            Tensor {
                rows: 1,
                cols: 1,
                data: vec![x],
            },
        );
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = one(1.0);
        let mut g = ps.zeros_like();
        g.tensors[0].data[0] = 123.0;
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        adam.update(&mut ps, &g);
        assert!((ps.tensors()[0].data[0] - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut ps = one(3.0);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &ps,
        );
        for _ in 0..2000 {
            let mut g = ps.zeros_like();
            g.tensors[0].data[0] = 2.0 * (ps.tensors()[0].data[0] - 0.5);
            adam.update(&mut ps, &g);
        }
        assert!((ps.tensors()[0].data[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn clipping() {
        let ps = one(0.0);
        let mut g = ps.zeros_like();
        g.tensors[0].data[0] = -10.0;
        assert_eq!(clip_global_norm(&mut g, 5.0), 10.0);
        assert_eq!(g.tensors[0].data[0], -5.0);
        assert_eq!(clip_global_norm(&mut g, 5.0), 5.0);
        assert_eq!(g.tensors[0].data[0], -5.0);
    }
}

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::params::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 0.0,
        }
    }
}

/// Adam with per-parameter step counters. Only parameters touched by the
/// gradient update move, so a step that differentiates a subset of a model
/// leaves the rest bit-identical even when earlier moments are nonzero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m = store
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect::<Vec<_>>();
        Self {
            config,
            v: m.clone(),
            m,
            t: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        let c = &self.config;
        let norm = grads.global_norm();
        let clip = if c.max_grad_norm > 0.0 && norm > c.max_grad_norm {
            c.max_grad_norm / norm
        } else {
            1.0
        };
        for id in grads.touched() {
            let g = grads.get(id).unwrap();
            let i = id.0;
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
            let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g[k] * clip;
                self.m[i][k] = c.beta1 * self.m[i][k] + (1.0 - c.beta1) * gk;
                self.v[i][k] = c.beta2 * self.v[i][k] + (1.0 - c.beta2) * gk * gk;
                let mh = self.m[i][k] / bc1;
                let vh = self.v[i][k] / bc2;
                p[k] -= c.lr * mh / (math::sqrt(vh) + c.eps);
            }
        }
    }

    /// First and second moments and per-parameter step counts.
    pub fn parts(&self) -> (&[Vec<f64>], &[Vec<f64>], &[u64]) {
        (&self.m, &self.v, &self.t)
    }

    /// Rebuild from [`Adam::parts`], checking the layout against `store`.
    pub fn from_parts(
        config: AdamConfig,
        store: &ParamStore,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        t: Vec<u64>,
    ) -> crate::Result<Self> {
        let ok = |x: &[Vec<f64>]| {
            x.len() == store.len()
                && x.iter()
                    .zip(store.params())
                    .all(|(a, p)| a.len() == p.value.len())
        };
        if !ok(&m) || !ok(&v) || t.len() != store.len() {
            return Err(crate::Error::InvalidArgument(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Self { config, m, v, t })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t.iter().copied().max().unwrap_or(0)
    }
}

//! Adam with decoupled parameter groups: a dense vector and lazily created
//! sparse octree cells.

use crate::octree::{CellPath, LogitGrads, OctreeDensity};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn step(&self, x: &mut f64, g: f64, m: &mut f64, v: &mut f64, t: u64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let mh = *m / (1.0 - self.beta1.powi(t as i32));
        let vh = *v / (1.0 - self.beta2.powi(t as i32));
        *x -= self.lr * mh / (vh.sqrt() + self.eps);
    }
}

#[derive(Debug, Clone)]
pub struct DenseAdam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl DenseAdam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        for i in 0..params.len() {
            self.config.step(&mut params[i], grads[i], &mut self.m[i], &mut self.v[i], self.t);
        }
    }
}

#[derive(Debug, Clone, Default)]
struct CellMoments {
    m: [f64; 8],
    v: [f64; 8],
    t: u64,
}

/// Adam over octree cells; a cell's moments (and its step count, used for
/// bias correction) advance only on steps where it receives a gradient.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    pub config: AdamConfig,
    state: BTreeMap<CellPath, CellMoments>,
}

impl SparseAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: BTreeMap::new() }
    }

    pub fn step(&mut self, density: &mut OctreeDensity, grads: &LogitGrads) {
        for (cell, g) in &grads.0 {
            let st = self.state.entry(*cell).or_default();
            st.t += 1;
            let logits = density.logits_mut(*cell);
            for k in 0..8 {
                self.config.step(&mut logits[k], g[k], &mut st.m[k], &mut st.v[k], st.t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::Aabb;

    #[test]
    fn dense_adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = DenseAdam::new(AdamConfig::with_lr(0.05), 2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = vec![0.0];
        let mut opt = DenseAdam::new(AdamConfig::with_lr(0.1), 1);
        opt.step(&mut x, &[5.0]);
        assert!((x[0] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn sparse_adam_touches_only_graded_cells() {
        let mut d = OctreeDensity::new(2, Aabb::cube(1.0)).unwrap();
        let mut opt = SparseAdam::new(AdamConfig::with_lr(0.1));
        let mut g = LogitGrads::new();
        g.entry(CellPath::ROOT)[3] = 1.0;
        opt.step(&mut d, &g);
        assert_eq!(d.cell_count(), 1);
        let root = d.cells().next().unwrap().1;
        assert!((root[3] + 0.1).abs() < 1e-9);
        assert_eq!(root[0], 0.0);
    }
}

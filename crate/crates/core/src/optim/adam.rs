//! Adam with per-slot learning rates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moments of one parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected update; `lr(i)` is the learning rate of slot `i`.
    /// Slots with zero gradient and zero moments are left untouched.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            if m == 0.0 {
                continue;
            }
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Adam moments for a table of fixed-width rows (one row per Gaussian).
/// Rows can be reordered, dropped and appended as the scene changes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowAdam<const W: usize> {
    pub m: Vec<[f64; W]>,
    pub v: Vec<[f64; W]>,
    pub step: u64,
}

impl<const W: usize> RowAdam<W> {
    pub fn zeros(rows: usize) -> Self {
        Self {
            m: vec![[0.0; W]; rows],
            v: vec![[0.0; W]; rows],
            step: 0,
        }
    }

    /// Rebuilds the state after a topology change: entry `k` of `sources`
    /// names the old row the new row `k` inherits, or `None` for fresh zeros.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let m = sources.iter().map(|s| s.map_or([0.0; W], |i| self.m[i])).collect();
        let v = sources.iter().map(|s| s.map_or([0.0; W], |i| self.v[i])).collect();
        self.m = m;
        self.v = v;
    }

    pub fn update(&mut self, cfg: &AdamConfig, rows: &mut [[f64; W]], grads: &[[f64; W]], lr: &[f64; W]) {
        assert_eq!(rows.len(), grads.len());
        assert_eq!(rows.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for r in 0..rows.len() {
            for i in 0..W {
                let g = grads[r][i];
                let m = cfg.beta1 * self.m[r][i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * self.v[r][i] + (1.0 - cfg.beta2) * g * g;
                self.m[r][i] = m;
                self.v[r][i] = v;
                if m == 0.0 {
                    continue;
                }
                rows[r][i] -= lr[i] * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::zeros(3);
        let mut p = vec![1.0, -2.0, 3.0];
        s.update(&AdamConfig::default(), &mut p, &[0.0; 3], |_| 0.1);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = AdamState::zeros(2);
        let mut p = vec![0.0, 0.0];
        s.update(&AdamConfig::default(), &mut p, &[250.0, -0.03], |_| 0.01);
        assert!((p[0] + 0.01).abs() < 1e-12);
        assert!((p[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn row_adam_matches_flat_adam() {
        let cfg = AdamConfig::default();
        let mut flat = AdamState::zeros(4);
        let mut rows = RowAdam::<2>::zeros(2);
        let mut p = vec![0.5, 1.0, -1.0, 2.0];
        let mut r = vec![[0.5, 1.0], [-1.0, 2.0]];
        for k in 0..5 {
            let g = [0.1 * k as f64, -0.2, 0.3, 0.05 * k as f64];
            flat.update(&cfg, &mut p, &g, |i| [0.01, 0.02][i % 2]);
            rows.update(&cfg, &mut r, &[[g[0], g[1]], [g[2], g[3]]], &[0.01, 0.02]);
        }
        assert_eq!(p, vec![r[0][0], r[0][1], r[1][0], r[1][1]]);
    }

    #[test]
    fn remap_keeps_and_zeroes() {
        let mut rows = RowAdam::<1>::zeros(2);
        rows.m = vec![[1.0], [2.0]];
        rows.v = vec![[3.0], [4.0]];
        rows.remap(&[Some(1), None, Some(0)]);
        assert_eq!(rows.m, vec![[2.0], [0.0], [1.0]]);
        assert_eq!(rows.v, vec![[4.0], [0.0], [3.0]]);
    }
}

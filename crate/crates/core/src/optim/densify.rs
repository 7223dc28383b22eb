//! Adaptive density control: clone, split and prune.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{self, Vec3};
use crate::scene::GaussianScene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    /// Iterations between densification passes.
    pub interval: usize,
    pub start: usize,
    pub until: usize,
    /// Average view-space positional gradient norm (NDC units) above which
    /// a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians whose largest scale exceeds this fraction of the scene
    /// extent are split; smaller ones are cloned.
    pub percent_dense: f64,
    pub min_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            until: 15_000,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            min_opacity: 0.005,
            max_gaussians: 1_000_000,
        }
    }
}

/// Screen-space gradient magnitudes accumulated between passes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one view's pixel-space mean gradient, scaled to NDC units.
    pub fn record(&mut self, index: usize, d_mean_px: [f64; 2], width: usize, height: usize) {
        let gx = d_mean_px[0] * 0.5 * width as f64;
        let gy = d_mean_px[1] * 0.5 * height as f64;
        self.grad_sum[index] += (gx * gx + gy * gy).sqrt();
        self.count[index] += 1;
    }

    pub fn average(&self, index: usize) -> f64 {
        match self.count[index] {
            0 => 0.0,
            c => self.grad_sum[index] / c as f64,
        }
    }
}

/// Result of one pass: for every Gaussian of the new scene, the index of the
/// old Gaussian whose optimizer state it keeps (`None` for new ones).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyOutcome {
    pub sources: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Standard normal deviate by Box-Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Clones small high-gradient Gaussians, splits large ones into two samples
/// at 1/1.6 scale, and prunes Gaussians below the opacity floor. `stream`
/// selects the random stream for split positions (the iteration number).
pub fn densify_and_prune(
    scene: &mut GaussianScene,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    extent: f64,
    stream: u64,
) -> Result<DensifyOutcome> {
    let n = scene.len();
    let old = std::mem::take(&mut scene.gaussians);
    let mut rng = ChaCha8Rng::seed_from_u64(math::splitmix64(scene.seed ^ 0x5EED_DE75));
    rng.set_stream(stream);
    let room = cfg.max_gaussians.saturating_sub(n);
    let mut grown = 0;
    let mut out = DensifyOutcome::default();
    let mut appended = Vec::new();
    for (i, g) in old.into_iter().enumerate() {
        if g.opacity() < cfg.min_opacity {
            out.pruned += 1;
            continue;
        }
        let hot = i < stats.count.len() && stats.average(i) >= cfg.grad_threshold && grown < room;
        if !hot {
            scene.gaussians.push(g);
            out.sources.push(Some(i));
            continue;
        }
        grown += 1;
        if g.max_scale() > cfg.percent_dense * extent {
            let r = g.rotation_matrix()?;
            let s = g.scale();
            for _ in 0..2 {
                let z = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
                let mut child = g.clone();
                child.position = g.position + r * s.component_mul(&z);
                child.log_scale = g.log_scale.map(|v| v - 1.6f64.ln());
                appended.push(child);
            }
            out.split += 1;
        } else {
            appended.push(g.clone());
            scene.gaussians.push(g);
            out.sources.push(Some(i));
            out.cloned += 1;
        }
    }
    for g in appended {
        scene.push(g);
        out.sources.push(None);
    }
    Ok(out)
}

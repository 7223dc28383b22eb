//! Pre-integrated environment BRDF (the "DFG" table of the split-sum
//! approximation).
//!
//! Entry `(cos θ_v, r)` stores `(scale, bias)` such that the hemispherical
//! integral of the GGX specular lobe with Schlick Fresnel equals
//! `F0 * scale + bias`.

use serde::{Deserialize, Serialize};

use crate::error::{GirError, Result};
use std::f64::consts::PI;

use crate::math::{ggx, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfgLut {
    res: usize,
    /// Row-major over roughness (rows) and view cosine (columns).
    entries: Vec<[f64; 2]>,
}

/// A bilinear LUT lookup with partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct DfgSample {
    pub scale: f64,
    pub bias: f64,
    pub d_cos: [f64; 2],
    pub d_roughness: [f64; 2],
}

impl DfgLut {
    pub fn from_entries(res: usize, entries: Vec<[f64; 2]>) -> Result<Self> {
        if entries.len() != res * res {
            return Err(GirError::DimensionMismatch(format!(
                "DFG table of resolution {res} needs {} entries",
                res * res
            )));
        }
        Ok(Self { res, entries })
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn entries(&self) -> &[[f64; 2]] {
        &self.entries
    }

    /// Entry at column `i` (view cosine `(i + 0.5) / N`) and row `j`
    /// (roughness `(j + 0.5) / N`).
    pub fn entry(&self, i: usize, j: usize) -> [f64; 2] {
        self.entries[j * self.res + i]
    }

    pub fn coordinate(&self, index: usize) -> f64 {
        (index as f64 + 0.5) / self.res as f64
    }

    pub fn sample(&self, cos_v: f64, roughness: f64) -> DfgSample {
        let n = self.res as f64;
        let top = n - 1.0;
        let x_raw = cos_v * n - 0.5;
        let y_raw = roughness * n - 0.5;
        let x = x_raw.clamp(0.0, top);
        let y = y_raw.clamp(0.0, top);
        let dx_active = if x_raw > 0.0 && x_raw < top { n } else { 0.0 };
        let dy_active = if y_raw > 0.0 && y_raw < top { n } else { 0.0 };
        let i0 = (x.floor() as usize).min(self.res - 2);
        let j0 = (y.floor() as usize).min(self.res - 2);
        let fx = x - i0 as f64;
        let fy = y - j0 as f64;
        let e00 = self.entry(i0, j0);
        let e10 = self.entry(i0 + 1, j0);
        let e01 = self.entry(i0, j0 + 1);
        let e11 = self.entry(i0 + 1, j0 + 1);
        let mut out = [0.0; 2];
        let mut d_cos = [0.0; 2];
        let mut d_r = [0.0; 2];
        for c in 0..2 {
            let a = e00[c] * (1.0 - fx) + e10[c] * fx;
            let b = e01[c] * (1.0 - fx) + e11[c] * fx;
            out[c] = a * (1.0 - fy) + b * fy;
            d_cos[c] = ((e10[c] - e00[c]) * (1.0 - fy) + (e11[c] - e01[c]) * fy) * dx_active;
            d_r[c] = (b - a) * dy_active;
        }
        DfgSample {
            scale: out[0],
            bias: out[1],
            d_cos,
            d_roughness: d_r,
        }
    }
}

const GL4_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];

/// Composite 4-point Gauss-Legendre rule on `[a, b]` with `panels` panels.
fn gauss_legendre(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// One table entry by deterministic quadrature.
///
/// The outer variable is `s` with `u = 1 - s^2`, `u` the GGX sampling
/// coordinate, so the lobe is resolved at every roughness and the
/// `1/sqrt(1-u)` growth at grazing half vectors cancels. The inner integral
/// runs over the azimuth arc on which the mirrored light direction stays
/// above the horizon.
pub fn dfg_entry(cos_v: f64, roughness: f64) -> [f64; 2] {
    let alpha = ggx::alpha_from_roughness(roughness);
    let cv = cos_v.clamp(1e-6, 1.0);
    let sv = (1.0 - cv * cv).max(0.0).sqrt();
    let v = Vec3::new(sv, 0.0, cv);
    let mut out = [0.0; 2];
    for (c, o) in out.iter_mut().enumerate() {
        *o = gauss_legendre(0.0, 1.0, 96, |sq| {
            let h0 = ggx::sample_half_vector(1.0 - sq * sq, 0.0, alpha);
            let (st, ct) = (h0.x, h0.z);
            if ct <= 0.0 {
                return 0.0;
            }
            // l.z > 0  <=>  cos(phi) > cv (1/(2 ct) - ct) / (sv st)
            let thr = cv * (0.5 / ct - ct);
            let denom = sv * st;
            let phi_max = if denom < 1e-14 {
                if thr < 0.0 { PI } else { 0.0 }
            } else {
                let k = thr / denom;
                if k >= 1.0 {
                    0.0
                } else if k <= -1.0 {
                    PI
                } else {
                    k.acos()
                }
            };
            if phi_max == 0.0 {
                return 0.0;
            }
            let arc = gauss_legendre(0.0, phi_max, 4, |phi| {
                let h = Vec3::new(st * phi.cos(), st * phi.sin(), ct);
                let vh = v.dot(&h);
                let lz = 2.0 * vh * ct - cv;
                if lz <= 0.0 || vh <= 0.0 {
                    return 0.0;
                }
                let g_vis = ggx::smith_g2(cv, lz, alpha) * vh / (ct * cv);
                let fc = ggx::schlick_weight(vh);
                g_vis * if c == 0 { 1.0 - fc } else { fc }
            });
            2.0 * sq * arc / PI
        });
    }
    out
}

/// Builds an `res x res` table; `res >= 16`.
pub fn build_dfg_lut(res: usize) -> Result<DfgLut> {
    use rayon::prelude::*;
    if res < 16 {
        return Err(GirError::invalid(format!("DFG resolution {res} must be >= 16")));
    }
    let n = res as f64;
    let entries = (0..res * res)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % res, idx / res);
            dfg_entry((i as f64 + 0.5) / n, (j as f64 + 0.5) / n)
        })
        .collect();
    DfgLut::from_entries(res, entries)
}

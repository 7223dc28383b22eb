//! Pre-integrated lighting: the cosine-convolved irradiance map and the
//! GGX-prefiltered specular mip chain.
//!
//! Both are linear in the source environment. Every output texel is a fixed
//! weighted sum of bilinear taps into a box-filtered pyramid of the source
//! (filtered importance sampling), so the same tap lists drive the forward
//! pass, a cached sparse operator for training, and its transpose.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GirError, Result};
use crate::math::{self, ggx, Rgb, Vec3};

use super::map::{taps_at, dir_to_coords, texel_direction, EnvironmentMap, Lookup};

/// Specular mip levels; level `k` is prefiltered at roughness `k / (K - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MipChain {
    pub levels: Vec<EnvironmentMap>,
}

/// One trilinear lookup into the chain, kept for the backward pass.
pub struct MipLookup {
    pub value: Rgb,
    pub lower: (usize, Lookup),
    pub upper: (usize, Lookup),
    pub blend: f64,
    /// d(level coordinate)/d(roughness); zero when roughness is clamped.
    pub dlevel_dr: f64,
}

impl MipChain {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn roughness_of(&self, level: usize) -> f64 {
        level as f64 / (self.levels.len() - 1) as f64
    }

    pub fn lookup(&self, dir: &Vec3, roughness: f64) -> MipLookup {
        let top = (self.levels.len() - 1) as f64;
        let lvl = roughness.clamp(0.0, 1.0) * top;
        let k0 = (lvl.floor() as usize).min(self.levels.len() - 1);
        let k1 = (k0 + 1).min(self.levels.len() - 1);
        let blend = lvl - k0 as f64;
        let l0 = self.levels[k0].lookup(dir);
        let l1 = self.levels[k1].lookup(dir);
        let value = l0.value * (1.0 - blend) + l1.value * blend;
        let dlevel_dr = if (0.0..1.0).contains(&roughness) && roughness > 0.0 {
            top
        } else {
            0.0
        };
        MipLookup {
            value,
            lower: (k0, l0),
            upper: (k1, l1),
            blend,
            dlevel_dr,
        }
    }

    pub fn sample(&self, dir: &Vec3, roughness: f64) -> Rgb {
        self.lookup(dir, roughness).value
    }
}

impl MipLookup {
    /// Backpropagates `upstream · value` into texel gradients of the chain;
    /// returns the gradients w.r.t. the lookup direction and roughness.
    pub fn backward(&self, chain: &MipChain, upstream: &Rgb, grads: &mut [Vec<Rgb>]) -> (Vec3, f64) {
        let (k0, l0) = &self.lower;
        let (k1, l1) = &self.upper;
        let w0 = 1.0 - self.blend;
        let w1 = self.blend;
        l0.scatter(&mut grads[*k0], &(upstream * w0));
        l1.scatter(&mut grads[*k1], &(upstream * w1));
        let t0 = chain.levels[*k0].texels();
        let t1 = chain.levels[*k1].texels();
        let d_dir = l0.dir_grad(t0, &(upstream * w0)) + l1.dir_grad(t1, &(upstream * w1));
        let d_r = if k0 == k1 {
            0.0
        } else {
            upstream.dot(&(l1.value - l0.value)) * self.dlevel_dr
        };
        (d_dir, d_r)
    }
}

impl EnvironmentMap {
    pub fn lookup(&self, dir: &Vec3) -> Lookup {
        Lookup::new(self.texels(), self.width(), self.height(), dir)
    }
}

/// Prefiltered lighting derived from one environment map.
#[derive(Debug, Clone, PartialEq)]
pub struct Lighting {
    pub irradiance: EnvironmentMap,
    pub specular: MipChain,
}

/// Texel gradients with the same shapes as a [`Lighting`].
#[derive(Debug, Clone)]
pub struct LightingGrad {
    pub irradiance: Vec<Rgb>,
    pub specular: Vec<Vec<Rgb>>,
}

impl LightingGrad {
    pub fn zeros_like(l: &Lighting) -> Self {
        Self {
            irradiance: vec![Rgb::zeros(); l.irradiance.texels().len()],
            specular: l
                .specular
                .levels
                .iter()
                .map(|m| vec![Rgb::zeros(); m.texels().len()])
                .collect(),
        }
    }

    pub fn add(&mut self, other: &LightingGrad) {
        for (a, b) in self.irradiance.iter_mut().zip(&other.irradiance) {
            *a += b;
        }
        for (la, lb) in self.specular.iter_mut().zip(&other.specular) {
            for (a, b) in la.iter_mut().zip(lb) {
                *a += b;
            }
        }
    }
}

/// Resolution and sampling settings of the prefiltering pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefilterSettings {
    pub specular_levels: usize,
    pub specular_samples: u32,
    pub irradiance_height: usize,
    pub irradiance_samples: u32,
    /// Smallest height of a specular level.
    pub min_level_height: usize,
    pub seed: u64,
}

impl Default for PrefilterSettings {
    fn default() -> Self {
        Self {
            specular_levels: 6,
            specular_samples: 128,
            irradiance_height: 16,
            irradiance_samples: 256,
            min_level_height: 4,
            seed: 0,
        }
    }
}

impl PrefilterSettings {
    /// Reduced sample counts used while training.
    pub fn training() -> Self {
        Self {
            specular_samples: 16,
            irradiance_samples: 64,
            ..Self::default()
        }
    }
}

/// Box pyramid of the source map, all levels concatenated in one buffer.
struct Pyramid {
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl Pyramid {
    fn new(width: usize, height: usize) -> Self {
        let mut dims = vec![(width, height)];
        let mut offsets = vec![0];
        let (mut w, mut h) = (width, height);
        let mut total = w * h;
        while h >= 2 && h % 2 == 0 {
            w /= 2;
            h /= 2;
            offsets.push(total);
            dims.push((w, h));
            total += w * h;
        }
        offsets.push(total);
        Self { dims, offsets }
    }

    fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn levels(&self) -> usize {
        self.dims.len()
    }

    fn build(&self, env: &[Rgb]) -> Vec<Rgb> {
        let mut buf = vec![Rgb::zeros(); self.len()];
        buf[..env.len()].copy_from_slice(env);
        for p in 1..self.levels() {
            let (w, h) = self.dims[p];
            let (pw, _) = self.dims[p - 1];
            let (src, dst) = buf.split_at_mut(self.offsets[p]);
            let src = &src[self.offsets[p - 1]..];
            for i in 0..h {
                for j in 0..w {
                    let s = src[2 * i * pw + 2 * j]
                        + src[2 * i * pw + 2 * j + 1]
                        + src[(2 * i + 1) * pw + 2 * j]
                        + src[(2 * i + 1) * pw + 2 * j + 1];
                    dst[i * w + j] = s * 0.25;
                }
            }
        }
        buf
    }

    /// Transpose of [`Pyramid::build`]: folds coarse-level gradients back into
    /// the base level.
    fn fold(&self, mut grad: Vec<Rgb>) -> Vec<Rgb> {
        for p in (1..self.levels()).rev() {
            let (w, h) = self.dims[p];
            let (pw, _) = self.dims[p - 1];
            let (fine, coarse) = grad.split_at_mut(self.offsets[p]);
            let fine = &mut fine[self.offsets[p - 1]..];
            for i in 0..h {
                for j in 0..w {
                    let g = coarse[i * w + j] * 0.25;
                    fine[2 * i * pw + 2 * j] += g;
                    fine[2 * i * pw + 2 * j + 1] += g;
                    fine[(2 * i + 1) * pw + 2 * j] += g;
                    fine[(2 * i + 1) * pw + 2 * j + 1] += g;
                }
            }
        }
        grad
    }
}

/// Output map of the prefilter pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Irradiance,
    Specular(usize),
}

/// Tap generator for one source resolution.
pub struct Prefilter {
    settings: PrefilterSettings,
    source: (usize, usize),
    pyramid: Pyramid,
}

impl Prefilter {
    pub fn new(source_width: usize, source_height: usize, settings: PrefilterSettings) -> Result<Self> {
        if settings.specular_levels < 2 {
            return Err(GirError::invalid("prefilter needs at least 2 specular levels"));
        }
        if settings.irradiance_height == 0 || settings.irradiance_height > source_height {
            return Err(GirError::invalid(format!(
                "irradiance height {} must be in 1..={source_height}",
                settings.irradiance_height
            )));
        }
        if settings.specular_samples == 0 || settings.irradiance_samples == 0 {
            return Err(GirError::invalid("sample counts must be >= 1"));
        }
        Ok(Self {
            settings,
            source: (source_width, source_height),
            pyramid: Pyramid::new(source_width, source_height),
        })
    }

    pub fn settings(&self) -> &PrefilterSettings {
        &self.settings
    }

    pub fn level_height(&self, k: usize) -> usize {
        (self.source.1 >> k).max(self.settings.min_level_height.min(self.source.1))
    }

    fn target_dims(&self, t: Target) -> (usize, usize) {
        match t {
            Target::Irradiance => (2 * self.settings.irradiance_height, self.settings.irradiance_height),
            Target::Specular(k) => {
                let h = self.level_height(k);
                (2 * h, h)
            }
        }
    }

    fn targets(&self) -> Vec<Target> {
        std::iter::once(Target::Irradiance)
            .chain((0..self.settings.specular_levels).map(Target::Specular))
            .collect()
    }

    /// Pyramid level whose texel footprint matches a sample of density `pdf`.
    fn source_level(&self, pdf: f64, samples: u32) -> usize {
        let (w, h) = self.source;
        let omega_s = 1.0 / (samples as f64 * pdf.max(1e-12));
        let omega_p = 4.0 * PI / (w * h) as f64;
        let lod = 0.5 * (omega_s / omega_p).log2() + 1.0;
        (lod.max(0.0).round() as usize).min(self.pyramid.levels() - 1)
    }

    fn push_taps(&self, level: usize, dir: &Vec3, weight: f64, out: &mut Vec<(u32, f64)>) {
        let (w, h) = self.pyramid.dims[level];
        let (s, t, _, _) = dir_to_coords(w, h, dir);
        let taps = taps_at(w, h, s, t);
        let base = self.pyramid.offsets[level];
        for k in 0..4 {
            out.push(((base + taps.index[k]) as u32, weight * taps.weight[k]));
        }
    }

    fn texel_taps(&self, target: Target, row: usize, col: usize, out: &mut Vec<(u32, f64)>) {
        out.clear();
        let (tw, th) = self.target_dims(target);
        let n = texel_direction(tw, th, row, col);
        match target {
            Target::Irradiance => {
                let count = self.settings.irradiance_samples;
                let seed = self.settings.seed ^ 0x1AAD_1A7C;
                for s in 0..count {
                    let (u1, u2) = math::hammersley(s, count, seed);
                    let r = u1.sqrt();
                    let phi = 2.0 * PI * u2;
                    let cos = (1.0 - u1).max(0.0).sqrt();
                    let local = Vec3::new(r * phi.cos(), r * phi.sin(), cos);
                    let dir = math::local_to_world(&local, &n);
                    let level = self.source_level(cos / PI, count);
                    self.push_taps(level, &dir, 1.0 / count as f64, out);
                }
            }
            Target::Specular(k) => {
                let roughness = k as f64 / (self.settings.specular_levels - 1) as f64;
                if k == 0 {
                    self.push_taps(0, &n, 1.0, out);
                    return;
                }
                let alpha = ggx::alpha_from_roughness(roughness);
                let count = self.settings.specular_samples;
                let seed = self.settings.seed ^ (0x5EC0_0000 + k as u64);
                let mut total = 0.0;
                let start = out.len();
                for s in 0..count {
                    let (u1, u2) = math::hammersley(s, count, seed);
                    let h_local = ggx::sample_half_vector(u1, u2, alpha);
                    let h = math::local_to_world(&h_local, &n);
                    let l = 2.0 * n.dot(&h) * h - n;
                    let n_dot_l = n.dot(&l);
                    if n_dot_l <= 0.0 {
                        continue;
                    }
                    // With n = v the sample density of l is D(h) / 4.
                    let pdf = ggx::distribution(h_local.z, alpha) / 4.0;
                    let level = self.source_level(pdf, count);
                    self.push_taps(level, &l, n_dot_l, out);
                    total += n_dot_l;
                }
                if total > 0.0 {
                    for tap in &mut out[start..] {
                        tap.1 /= total;
                    }
                } else {
                    self.push_taps(0, &n, 1.0, out);
                }
            }
        }
    }

    fn check_source(&self, env: &EnvironmentMap) -> Result<()> {
        if (env.width(), env.height()) != self.source {
            return Err(GirError::DimensionMismatch(format!(
                "prefilter built for {}x{}, got {}x{}",
                self.source.0,
                self.source.1,
                env.width(),
                env.height()
            )));
        }
        Ok(())
    }

    fn run_target(&self, target: Target, pyramid: &[Rgb]) -> EnvironmentMap {
        let (w, h) = self.target_dims(target);
        let rows: Vec<Vec<Rgb>> = (0..h)
            .into_par_iter()
            .map(|i| {
                let mut taps = Vec::new();
                (0..w)
                    .map(|j| {
                        self.texel_taps(target, i, j, &mut taps);
                        taps.iter()
                            .fold(Rgb::zeros(), |acc, (c, wt)| acc + pyramid[*c as usize] * *wt)
                    })
                    .collect()
            })
            .collect();
        EnvironmentMap::new(w, h, rows.concat()).expect("prefilter output is a valid map")
    }

    /// Computes every output map directly from tap lists (no caching).
    pub fn apply(&self, env: &EnvironmentMap) -> Result<Lighting> {
        self.check_source(env)?;
        let pyramid = self.pyramid.build(env.texels());
        let irradiance = self.run_target(Target::Irradiance, &pyramid);
        let levels = (0..self.settings.specular_levels)
            .map(|k| self.run_target(Target::Specular(k), &pyramid))
            .collect();
        Ok(Lighting {
            irradiance,
            specular: MipChain { levels },
        })
    }

    /// Materializes the tap lists as sparse matrices for repeated use.
    pub fn operator(&self) -> LightingOperator {
        let maps = self
            .targets()
            .into_iter()
            .map(|t| {
                let (w, h) = self.target_dims(t);
                let rows: Vec<Vec<(u32, f64)>> = (0..h * w)
                    .into_par_iter()
                    .map(|idx| {
                        let mut taps = Vec::new();
                        self.texel_taps(t, idx / w, idx % w, &mut taps);
                        taps
                    })
                    .collect();
                let mut m = SparseMap {
                    width: w,
                    height: h,
                    row_ptr: Vec::with_capacity(rows.len() + 1),
                    cols: Vec::new(),
                    weights: Vec::new(),
                };
                m.row_ptr.push(0);
                for r in rows {
                    for (c, wt) in r {
                        m.cols.push(c);
                        m.weights.push(wt);
                    }
                    m.row_ptr.push(m.cols.len());
                }
                m
            })
            .collect();
        LightingOperator {
            source: self.source,
            pyramid: Pyramid::new(self.source.0, self.source.1),
            maps,
        }
    }
}

struct SparseMap {
    width: usize,
    height: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseMap {
    fn apply(&self, src: &[Rgb]) -> EnvironmentMap {
        let texels = (0..self.width * self.height)
            .into_par_iter()
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .fold(Rgb::zeros(), |acc, e| acc + src[self.cols[e] as usize] * self.weights[e])
            })
            .collect();
        EnvironmentMap::new(self.width, self.height, texels).expect("operator output is a valid map")
    }

    fn apply_transpose(&self, grad: &[Rgb], out: &mut [Rgb]) {
        for (r, g) in grad.iter().enumerate() {
            if *g == Rgb::zeros() {
                continue;
            }
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[e] as usize] += g * self.weights[e];
            }
        }
    }
}

/// Cached sparse form of a [`Prefilter`]; bit-identical to `Prefilter::apply`.
pub struct LightingOperator {
    source: (usize, usize),
    pyramid: Pyramid,
    maps: Vec<SparseMap>,
}

impl LightingOperator {
    pub fn nnz(&self) -> usize {
        self.maps.iter().map(|m| m.cols.len()).sum()
    }

    pub fn apply(&self, env: &EnvironmentMap) -> Result<Lighting> {
        if (env.width(), env.height()) != self.source {
            return Err(GirError::DimensionMismatch("lighting operator source size".into()));
        }
        let pyramid = self.pyramid.build(env.texels());
        let irradiance = self.maps[0].apply(&pyramid);
        let levels = self.maps[1..].iter().map(|m| m.apply(&pyramid)).collect();
        Ok(Lighting {
            irradiance,
            specular: MipChain { levels },
        })
    }

    /// Gradient w.r.t. the source environment texels.
    pub fn backward(&self, grad: &LightingGrad) -> Vec<Rgb> {
        let mut src = vec![Rgb::zeros(); self.pyramid.len()];
        self.maps[0].apply_transpose(&grad.irradiance, &mut src);
        for (m, g) in self.maps[1..].iter().zip(&grad.specular) {
            m.apply_transpose(g, &mut src);
        }
        let mut base = self.pyramid.fold(src);
        base.truncate(self.source.0 * self.source.1);
        base
    }
}

/// GGX-prefiltered specular levels of `env`.
pub fn prefilter_specular(env: &EnvironmentMap, levels: usize, samples_per_texel: u32, seed: u64) -> Result<MipChain> {
    let settings = PrefilterSettings {
        specular_levels: levels,
        specular_samples: samples_per_texel,
        irradiance_height: 1.min(env.height()),
        irradiance_samples: 1,
        seed,
        ..PrefilterSettings::default()
    };
    let pf = Prefilter::new(env.width(), env.height(), settings)?;
    pf.check_source(env)?;
    let pyramid = pf.pyramid.build(env.texels());
    Ok(MipChain {
        levels: (0..levels)
            .map(|k| pf.run_target(Target::Specular(k), &pyramid))
            .collect(),
    })
}

/// Cosine-weighted irradiance map (`∫ L(ω) (ω·n) / π dω`) of `env`.
pub fn compute_irradiance(env: &EnvironmentMap, out_height: usize, samples: u32, seed: u64) -> Result<EnvironmentMap> {
    let settings = PrefilterSettings {
        specular_levels: 2,
        specular_samples: 1,
        irradiance_height: out_height,
        irradiance_samples: samples,
        seed,
        ..PrefilterSettings::default()
    };
    let pf = Prefilter::new(env.width(), env.height(), settings)?;
    pf.check_source(env)?;
    let pyramid = pf.pyramid.build(env.texels());
    Ok(pf.run_target(Target::Irradiance, &pyramid))
}

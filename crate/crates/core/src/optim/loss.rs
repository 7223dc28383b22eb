//! Image-space losses with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frame::Image;
use crate::math::{Rgb, Vec3};
use crate::raster::{FrameBuffers, PixelGrads};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ssim: f64,
    pub smooth_normal: f64,
    pub smooth_albedo: f64,
    pub smooth_roughness: f64,
    pub smooth_metallic: f64,
    pub light: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.2,
            smooth_normal: 0.01,
            smooth_albedo: 0.01,
            smooth_roughness: 0.01,
            smooth_metallic: 0.01,
            light: 0.005,
        }
    }
}

/// Every loss part of one step. `total` is the weighted sum of the parts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub mae: f64,
    pub dssim: f64,
    pub smooth_normal: f64,
    pub smooth_albedo: f64,
    pub smooth_roughness: f64,
    pub smooth_metallic: f64,
    pub light: f64,
}

impl LossReport {
    pub fn reconstruction(&self, w: &LossWeights) -> f64 {
        (1.0 - w.ssim) * self.mae + w.ssim * self.dssim
    }

    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.reconstruction(w)
            + w.smooth_normal * self.smooth_normal
            + w.smooth_albedo * self.smooth_albedo
            + w.smooth_roughness * self.smooth_roughness
            + w.smooth_metallic * self.smooth_metallic
            + w.light * self.light
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error over pixels and channels, with its gradient w.r.t. `x`.
pub fn mae(x: &Image, y: &Image) -> Result<(f64, Vec<Rgb>)> {
    x.same_shape(y)?;
    let n = (3 * x.pixels.len()) as f64;
    let mut l = 0.0;
    let grad = x
        .pixels
        .iter()
        .zip(&y.pixels)
        .map(|(a, b)| {
            let d = a - b;
            l += d.abs().sum();
            d.map(sign) / n
        })
        .collect();
    Ok((l / n, grad))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding. The operator is symmetric, so
/// it is also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5,
/// zero padding) and its gradient w.r.t. `x`.
pub fn ssim(x: &Image, y: &Image) -> Result<(f64, Vec<Rgb>)> {
    x.same_shape(y)?;
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let k = gaussian_kernel();
    let mut total = 0.0;
    let mut grad = vec![Rgb::zeros(); n];
    for c in 0..3 {
        let xs: Vec<f64> = x.pixels.iter().map(|p| p[c]).collect();
        let ys: Vec<f64> = y.pixels.iter().map(|p| p[c]).collect();
        let sq = |v: &[f64], u: &[f64]| -> Vec<f64> { v.iter().zip(u).map(|(a, b)| a * b).collect() };
        let mx = blur(&xs, w, h, &k);
        let my = blur(&ys, w, h, &k);
        let mxx = blur(&sq(&xs, &xs), w, h, &k);
        let myy = blur(&sq(&ys, &ys), w, h, &k);
        let mxy = blur(&sq(&xs, &ys), w, h, &k);
        let mut da = vec![0.0; n];
        let mut db = vec![0.0; n];
        let mut dc = vec![0.0; n];
        for p in 0..n {
            let vx = mxx[p] - mx[p] * mx[p];
            let vy = myy[p] - my[p] * my[p];
            let cxy = mxy[p] - mx[p] * my[p];
            let n1 = 2.0 * mx[p] * my[p] + C1;
            let n2 = 2.0 * cxy + C2;
            let d1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let d2 = vx + vy + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            let ds_dmx = 2.0 * my[p] * n2 / (d1 * d2) - s * 2.0 * mx[p] / d1;
            let ds_dvx = -s / d2;
            let ds_dcxy = 2.0 * n1 / (d1 * d2);
            db[p] = ds_dvx;
            dc[p] = ds_dcxy;
            da[p] = ds_dmx - 2.0 * mx[p] * ds_dvx - my[p] * ds_dcxy;
        }
        let ba = blur(&da, w, h, &k);
        let bb = blur(&db, w, h, &k);
        let bc = blur(&dc, w, h, &k);
        let scale = 1.0 / (3 * n) as f64;
        for p in 0..n {
            grad[p][c] = (ba[p] + 2.0 * xs[p] * bb[p] + ys[p] * bc[p]) * scale;
        }
    }
    Ok((total / (3 * n) as f64, grad))
}

/// `(1 - SSIM) / 2` and its gradient.
pub fn dssim(x: &Image, y: &Image) -> Result<(f64, Vec<Rgb>)> {
    let (s, g) = ssim(x, y)?;
    Ok(((1.0 - s) / 2.0, g.into_iter().map(|v| v * -0.5).collect()))
}

/// Edge-aware smoothness of a `channels`-wide attribute map guided by `image`:
/// `(1/HW) Σ |∂x attr| exp(-|∂x I|) + |∂y attr| exp(-|∂y I|)` with forward
/// differences. For vector attributes `|∂ attr|` is the L1 norm over
/// channels; `|∂ I|` is the mean absolute difference over color channels.
pub fn smoothness(attr: &[f64], channels: usize, image: &Image) -> Result<(f64, Vec<f64>)> {
    let (w, h) = (image.width, image.height);
    if attr.len() != w * h * channels {
        return Err(crate::GirError::DimensionMismatch("smoothness attribute map".into()));
    }
    let n = (w * h) as f64;
    let mut l = 0.0;
    let mut grad = vec![0.0; attr.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for (dx, dy) in [(1usize, 0usize), (0, 1)] {
                if x + dx >= w || y + dy >= h {
                    continue;
                }
                let q = (y + dy) * w + x + dx;
                let di = (image.pixels[q] - image.pixels[p]).abs().sum() / 3.0;
                let wgt = (-di).exp() / n;
                for c in 0..channels {
                    let d = attr[q * channels + c] - attr[p * channels + c];
                    l += wgt * d.abs();
                    let s = wgt * sign(d);
                    grad[q * channels + c] += s;
                    grad[p * channels + c] -= s;
                }
            }
        }
    }
    Ok((l, grad))
}

fn flatten3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten3(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(Vec3::from_column_slice).collect()
}

/// All image-space loss terms of one rendered view against `target`, and the
/// gradient of their weighted sum w.r.t. the frame buffers. The light
/// regularizer is left at zero here.
pub fn image_losses(fb: &FrameBuffers, target: &Image, w: &LossWeights) -> Result<(LossReport, PixelGrads)> {
    let rendered = Image::new(fb.width, fb.height, fb.color.clone())?;
    rendered.same_shape(target)?;
    let mut rep = LossReport::default();
    let mut grads = PixelGrads::default();

    let (l_mae, g_mae) = mae(&rendered, target)?;
    rep.mae = l_mae;
    let mut g_color: Vec<Rgb> = g_mae.into_iter().map(|g| g * (1.0 - w.ssim)).collect();
    if w.ssim != 0.0 {
        let (l_ds, g_ds) = dssim(&rendered, target)?;
        rep.dssim = l_ds;
        for (a, b) in g_color.iter_mut().zip(g_ds) {
            *a += b * w.ssim;
        }
    } else {
        rep.dssim = dssim(&rendered, target)?.0;
    }
    grads.color = g_color;

    let (l, g) = smoothness(&flatten3(&fb.normal), 3, target)?;
    rep.smooth_normal = l;
    grads.normal = unflatten3(&g).into_iter().map(|v| v * w.smooth_normal).collect();
    let (l, g) = smoothness(&flatten3(&fb.albedo), 3, target)?;
    rep.smooth_albedo = l;
    grads.albedo = unflatten3(&g).into_iter().map(|v| v * w.smooth_albedo).collect();
    let (l, g) = smoothness(&fb.roughness, 1, target)?;
    rep.smooth_roughness = l;
    grads.roughness = g.into_iter().map(|v| v * w.smooth_roughness).collect();
    let (l, g) = smoothness(&fb.metallic, 1, target)?;
    rep.smooth_metallic = l;
    grads.metallic = g.into_iter().map(|v| v * w.smooth_metallic).collect();

    rep.total = rep.weighted_total(w);
    Ok((rep, grads))
}

//! Equirectangular (lat-long) radiance maps.
//!
//! Row 0 is the +z pole, rows advance towards -z. Column coordinate grows
//! with azimuth `atan2(y, x)`, the seam sits at azimuth ±π. Texel `(i, j)`
//! has its center at continuous coordinates `(j + 0.5, i + 0.5)`.

use std::f64::consts::PI;

use crate::error::{GirError, Result};
use crate::math::{Rgb, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    texels: Vec<Rgb>,
}

/// Four bilinear taps of a lookup, with the partial derivatives of each
/// weight w.r.t. the continuous column (`s`) and row (`t`) coordinates.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTaps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub d_ds: [f64; 4],
    pub d_dt: [f64; 4],
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, texels: Vec<Rgb>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(GirError::DimensionMismatch(format!(
                "environment map must be 2H x H, got {width} x {height}"
            )));
        }
        if texels.len() != width * height {
            return Err(GirError::DimensionMismatch(format!(
                "expected {} texels, got {}",
                width * height,
                texels.len()
            )));
        }
        if texels
            .iter()
            .any(|t| t.iter().any(|c| !c.is_finite() || *c < 0.0))
        {
            return Err(GirError::invalid("environment texels must be finite and >= 0"));
        }
        Ok(Self {
            width,
            height,
            texels,
        })
    }

    pub fn constant(height: usize, value: Rgb) -> Self {
        Self {
            width: 2 * height,
            height,
            texels: vec![value; 2 * height * height],
        }
    }

    /// Map whose texel centers take the value `f(direction)`.
    pub fn from_fn(height: usize, f: impl Fn(&Vec3) -> Rgb) -> Self {
        let width = 2 * height;
        let mut texels = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                texels.push(f(&texel_direction(width, height, i, j)));
            }
        }
        Self {
            width,
            height,
            texels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texels(&self) -> &[Rgb] {
        &self.texels
    }

    pub fn texels_mut(&mut self) -> &mut [Rgb] {
        &mut self.texels
    }

    pub fn into_texels(self) -> Vec<Rgb> {
        self.texels
    }

    pub fn texel(&self, row: usize, col: usize) -> Rgb {
        self.texels[row * self.width + col]
    }

    pub fn direction(&self, row: usize, col: usize) -> Vec3 {
        texel_direction(self.width, self.height, row, col)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            texels: self.texels.iter().map(|t| t * k).collect(),
        }
    }

    /// Bilinear lookup along `dir` (any nonzero length).
    pub fn sample(&self, dir: &Vec3) -> Rgb {
        let taps = bilinear_taps(self.width, self.height, dir);
        let mut out = Rgb::zeros();
        for k in 0..4 {
            out += self.texels[taps.index[k]] * taps.weight[k];
        }
        out
    }

    /// Solid angle of texel row `i`.
    pub fn texel_solid_angle(&self, row: usize) -> f64 {
        let t0 = PI * row as f64 / self.height as f64;
        let t1 = PI * (row + 1) as f64 / self.height as f64;
        (t0.cos() - t1.cos()) * 2.0 * PI / self.width as f64
    }

    /// 2x2 box average; `None` once the map is a single row high.
    pub fn downsample(&self) -> Option<Self> {
        if self.height < 2 {
            return None;
        }
        let (h, w) = (self.height / 2, self.width / 2);
        let mut texels = Vec::with_capacity(w * h);
        for i in 0..h {
            for j in 0..w {
                let s = self.texel(2 * i, 2 * j)
                    + self.texel(2 * i, 2 * j + 1)
                    + self.texel(2 * i + 1, 2 * j)
                    + self.texel(2 * i + 1, 2 * j + 1);
                texels.push(s * 0.25);
            }
        }
        Some(Self {
            width: w,
            height: h,
            texels,
        })
    }

    /// Largest absolute channel value.
    pub fn max_value(&self) -> f64 {
        self.texels
            .iter()
            .flat_map(|t| t.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Rotates the map about the +z axis by `angle` radians (resampled).
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_fn(self.height, |d| {
            let back = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
            self.sample(&back)
        })
    }
}

/// Unit direction through the center of texel `(row, col)`.
pub fn texel_direction(width: usize, height: usize, row: usize, col: usize) -> Vec3 {
    let theta = PI * (row as f64 + 0.5) / height as f64;
    let phi = 2.0 * PI * ((col as f64 + 0.5) / width as f64 - 0.5);
    let st = theta.sin();
    Vec3::new(st * phi.cos(), st * phi.sin(), theta.cos())
}

/// Continuous `(s, t)` coordinates of `dir` together with their partial
/// derivatives w.r.t. the (unnormalized) direction.
pub fn dir_to_coords(width: usize, height: usize, dir: &Vec3) -> (f64, f64, Vec3, Vec3) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let rho2 = (x * x + y * y).max(1e-24);
    let rho = rho2.sqrt();
    let phi = y.atan2(x);
    let theta = rho.atan2(z);
    let s = (phi / (2.0 * PI) + 0.5) * width as f64;
    let t = theta / PI * height as f64;
    let ks = width as f64 / (2.0 * PI);
    let kt = height as f64 / PI;
    let ds = Vec3::new(-y / rho2, x / rho2, 0.0) * ks;
    let r2 = rho2 + z * z;
    let dt = Vec3::new(z * x / rho / r2, z * y / rho / r2, -rho / r2) * kt;
    (s, t, ds, dt)
}

pub fn bilinear_taps(width: usize, height: usize, dir: &Vec3) -> BilinearTaps {
    let (s, t, _, _) = dir_to_coords(width, height, dir);
    taps_at(width, height, s, t)
}

/// Bilinear taps at continuous coordinates: wrapped horizontally, clamped
/// at the poles.
pub fn taps_at(width: usize, height: usize, s: f64, t: f64) -> BilinearTaps {
    let x = s - 0.5;
    let y = t - 0.5;
    let xf = x.floor();
    let yf = y.floor();
    let fx = x - xf;
    let fy = y - yf;
    let w = width as i64;
    let j0 = (xf as i64).rem_euclid(w) as usize;
    let j1 = (xf as i64 + 1).rem_euclid(w) as usize;
    let hmax = height as i64 - 1;
    let i0 = (yf as i64).clamp(0, hmax) as usize;
    let i1 = (yf as i64 + 1).clamp(0, hmax) as usize;
    BilinearTaps {
        index: [
            i0 * width + j0,
            i0 * width + j1,
            i1 * width + j0,
            i1 * width + j1,
        ],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
        d_ds: [-(1.0 - fy), 1.0 - fy, -fy, fy],
        d_dt: [-(1.0 - fx), -fx, 1.0 - fx, fx],
    }
}

/// Value of a bilinear lookup and the gradient plumbing for it.
pub struct Lookup {
    pub value: Rgb,
    pub taps: BilinearTaps,
    pub ds_ddir: Vec3,
    pub dt_ddir: Vec3,
}

impl Lookup {
    pub fn new(texels: &[Rgb], width: usize, height: usize, dir: &Vec3) -> Self {
        let (s, t, ds, dt) = dir_to_coords(width, height, dir);
        let taps = taps_at(width, height, s, t);
        let mut value = Rgb::zeros();
        for k in 0..4 {
            value += texels[taps.index[k]] * taps.weight[k];
        }
        Self {
            value,
            taps,
            ds_ddir: ds,
            dt_ddir: dt,
        }
    }

    /// Gradient of `upstream · value` w.r.t. the lookup direction.
    pub fn dir_grad(&self, texels: &[Rgb], upstream: &Rgb) -> Vec3 {
        let mut g_s = 0.0;
        let mut g_t = 0.0;
        for k in 0..4 {
            let v = upstream.dot(&texels[self.taps.index[k]]);
            g_s += v * self.taps.d_ds[k];
            g_t += v * self.taps.d_dt[k];
        }
        self.ds_ddir * g_s + self.dt_ddir * g_t
    }

    /// Scatters `upstream` into a texel-gradient buffer.
    pub fn scatter(&self, grad: &mut [Rgb], upstream: &Rgb) {
        for k in 0..4 {
            grad[self.taps.index[k]] += upstream * self.taps.weight[k];
        }
    }
}

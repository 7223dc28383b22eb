//! Binary voxelization of the Gaussian cloud and one-step occlusion tracing.

use std::io::{Read, Write};

use crate::error::{GirError, Result};
use crate::math::{self, Vec3};
use crate::scene::{build_covariance, BoundingSphere, GaussianScene};

/// Gaussians below this opacity do not occupy voxels.
pub const OCCUPANCY_OPACITY: f64 = 0.5;
pub const DEFAULT_GRID_RES: usize = 128;
pub const DEFAULT_RAY_SAMPLES: usize = 64;
pub const DEFAULT_DIFFUSE_RAYS: usize = 128;

/// Cubic occupancy grid over `[min, min + extent]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    res: usize,
    min: Vec3,
    extent: f64,
    bits: Vec<u64>,
    sphere: BoundingSphere,
}

impl OccupancyGrid {
    /// An empty grid spanning the cube around `sphere`.
    pub fn empty(res: usize, sphere: BoundingSphere) -> Result<Self> {
        if res < 8 {
            return Err(GirError::invalid(format!("grid resolution {res} must be >= 8")));
        }
        let r = sphere.radius.max(1e-9);
        Ok(Self {
            res,
            min: sphere.center - Vec3::repeat(r),
            extent: 2.0 * r,
            bits: vec![0; (res * res * res).div_ceil(64)],
            sphere,
        })
    }

    /// An empty grid over an explicit cube; the bounding sphere is the cube's
    /// circumscribed sphere.
    pub fn with_bounds(res: usize, min: Vec3, extent: f64) -> Result<Self> {
        if !(extent > 0.0) {
            return Err(GirError::invalid("grid extent must be positive"));
        }
        let center = min + Vec3::repeat(0.5 * extent);
        let mut g = Self::empty(
            res,
            BoundingSphere {
                center,
                radius: 0.5 * extent * 3f64.sqrt(),
            },
        )?;
        g.min = min;
        g.extent = extent;
        Ok(g)
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn voxel_size(&self) -> f64 {
        self.extent / self.res as f64
    }

    pub fn bounding_sphere(&self) -> BoundingSphere {
        self.sphere
    }

    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res + j) * self.res + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        let f = self.flat(i, j, k);
        self.bits[f / 64] >> (f % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize) {
        let f = self.flat(i, j, k);
        self.bits[f / 64] |= 1 << (f % 64);
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let inv = self.res as f64 / self.extent;
        let mut idx = [0; 3];
        for a in 0..3 {
            let x = (p[a] - self.min[a]) * inv;
            if !(x >= 0.0 && x < self.res as f64) {
                return None;
            }
            idx[a] = x as usize;
        }
        Some(idx)
    }

    pub fn is_occupied(&self, p: &Vec3) -> bool {
        self.voxel_of(p).is_some_and(|[i, j, k]| self.get(i, j, k))
    }

    /// Marks every voxel intersecting the box `[lo, hi]`.
    pub fn fill_box(&mut self, lo: &Vec3, hi: &Vec3) {
        let inv = self.res as f64 / self.extent;
        let top = self.res as f64 - 1.0;
        let mut r = [(0usize, 0usize); 3];
        for a in 0..3 {
            let a0 = (lo[a] - self.min[a]) * inv;
            let a1 = (hi[a] - self.min[a]) * inv;
            if a1 < 0.0 || a0 >= self.res as f64 {
                return;
            }
            r[a] = (a0.floor().clamp(0.0, top) as usize, a1.floor().clamp(0.0, top) as usize);
        }
        for k in r[2].0..=r[2].1 {
            for j in r[1].0..=r[1].1 {
                for i in r[0].0..=r[0].1 {
                    self.set(i, j, k);
                }
            }
        }
    }

    /// Raw dump: a 16-byte header of four little-endian `f32`
    /// (`min.x`, `min.y`, `min.z`, `extent`) followed by the occupancy bits,
    /// x fastest, packed LSB-first into `ceil(res^3 / 8)` bytes. The
    /// resolution follows from the payload length.
    pub fn write_raw(&self, mut w: impl Write) -> Result<()> {
        for v in [self.min.x, self.min.y, self.min.z, self.extent] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        let nbytes = (self.res * self.res * self.res).div_ceil(8);
        let bytes: Vec<u8> = self
            .bits
            .iter()
            .flat_map(|b| b.to_le_bytes())
            .take(nbytes)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_raw(mut r: impl Read) -> Result<Self> {
        let mut all = Vec::new();
        r.read_to_end(&mut all)?;
        if all.len() < 16 {
            return Err(GirError::format("voxel dump", "truncated header"));
        }
        let f = |i: usize| f32::from_le_bytes(all[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let payload = &all[16..];
        let res = (1..=4096usize)
            .find(|&n| (n * n * n).div_ceil(8) >= payload.len())
            .filter(|&n| (n * n * n).div_ceil(8) == payload.len())
            .ok_or_else(|| GirError::format("voxel dump", "payload is not a cube of bits"))?;
        let mut g = Self::with_bounds(res, Vec3::new(f(0), f(1), f(2)), f(3))?;
        for (wi, chunk) in payload.chunks(8).enumerate() {
            let mut b = [0u8; 8];
            b[..chunk.len()].copy_from_slice(chunk);
            g.bits[wi] = u64::from_le_bytes(b);
        }
        Ok(g)
    }
}

/// Occupancy grid of `scene` fitted to its bounding sphere.
pub fn voxelize(scene: &GaussianScene, res: usize) -> Result<OccupancyGrid> {
    let sphere = scene.bounding_sphere()?;
    let mut grid = OccupancyGrid::empty(res, sphere)?;
    fill_scene(&mut grid, scene)?;
    Ok(grid)
}

/// Marks the 3-sigma world-axis box of every sufficiently opaque Gaussian.
pub fn fill_scene(grid: &mut OccupancyGrid, scene: &GaussianScene) -> Result<()> {
    let mut any = false;
    for g in &scene.gaussians {
        if g.opacity() < OCCUPANCY_OPACITY {
            continue;
        }
        let (lo, hi) = three_sigma_box(g)?;
        grid.fill_box(&lo, &hi);
        any = true;
    }
    if !any {
        return Err(GirError::NoOccupiers);
    }
    Ok(())
}

/// `μ ± 3 sqrt(Σ_kk)` per world axis.
pub fn three_sigma_box(g: &crate::scene::GaussianParams) -> Result<(Vec3, Vec3)> {
    let cov = build_covariance(g)?;
    let half = Vec3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * 3.0;
    Ok((g.position - half, g.position + half))
}

/// True iff one of the `n_samples` equally spaced points
/// `x + t_k dir`, `t_k = self_radius + (t_max - self_radius) k / n`, `k = 1..=n`,
/// lies in an occupied voxel.
pub fn trace_occlusion(
    grid: &OccupancyGrid,
    x: &Vec3,
    dir: &Vec3,
    t_max: f64,
    n_samples: usize,
    self_radius: f64,
) -> bool {
    if t_max <= self_radius || n_samples == 0 {
        return false;
    }
    let span = t_max - self_radius;
    (1..=n_samples).any(|k| {
        let t = self_radius + span * k as f64 / n_samples as f64;
        grid.is_occupied(&(x + dir * t))
    })
}

/// 1 when the ray from `x` reaches the bounding sphere unblocked.
pub fn direct_visibility(grid: &OccupancyGrid, x: &Vec3, dir: &Vec3, self_radius: f64) -> f64 {
    let t_max = grid.sphere.exit_distance(x, dir);
    if trace_occlusion(grid, x, dir, t_max, DEFAULT_RAY_SAMPLES, self_radius) {
        0.0
    } else {
        1.0
    }
}

/// Fraction of `n_rays` hemisphere rays around `n` that escape. `t_max` of
/// `None` traces each ray to the bounding-sphere exit.
pub fn diffuse_visibility(
    grid: &OccupancyGrid,
    x: &Vec3,
    n: &Vec3,
    n_rays: usize,
    t_max: Option<f64>,
    self_radius: f64,
    seed: u64,
) -> Result<f64> {
    let dirs = math::sample_hemisphere(n, n_rays, seed)?;
    let open = dirs
        .iter()
        .filter(|d| {
            let t = t_max.unwrap_or_else(|| grid.sphere.exit_distance(x, d));
            !trace_occlusion(grid, x, d, t, DEFAULT_RAY_SAMPLES, self_radius)
        })
        .count();
    Ok(open as f64 / n_rays as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::IDENTITY_QUAT;
    use crate::scene::GaussianParams;
    use proptest::prelude::*;

    fn unit_cube(res: usize) -> OccupancyGrid {
        OccupancyGrid::with_bounds(res, Vec3::zeros(), 1.0).unwrap()
    }

    fn iso(p: Vec3, s: f64) -> GaussianParams {
        GaussianParams::new(p, Vec3::repeat(s), IDENTITY_QUAT)
    }

    #[test]
    fn tiny_gaussian_occupies_few_voxels() {
        let mut grid = unit_cube(128);
        let mut scene = GaussianScene::new(0);
        scene.push(iso(Vec3::repeat(0.5 + 1e-3), 0.001));
        fill_scene(&mut grid, &scene).unwrap();
        let n = grid.occupied_count();
        assert!((1..=27).contains(&n), "{n}");

        let mut grid = unit_cube(128);
        let mut scene = GaussianScene::new(0);
        scene.push(iso(Vec3::repeat(0.5), 0.01));
        fill_scene(&mut grid, &scene).unwrap();
        let n = grid.occupied_count();
        // Direct box oracle.
        let h = 0.03;
        let vs = 1.0 / 128.0;
        let span = |c: f64| ((c - h) / vs).floor() as usize..=((c + h) / vs).floor() as usize;
        let expect = span(0.5).count().pow(3);
        assert_eq!(n, expect);
    }

    #[test]
    fn no_occupiers_is_an_error() {
        let mut scene = GaussianScene::new(0);
        let mut g = iso(Vec3::zeros(), 0.1);
        g.opacity_logit = math::logit(0.1);
        scene.push(g);
        assert!(matches!(voxelize(&scene, 32), Err(GirError::NoOccupiers)));
        assert!(voxelize(&scene, 4).is_err());
    }

    #[test]
    fn refinement_consistency() {
        let mut scene = GaussianScene::new(3);
        for k in 0..10 {
            let t = k as f64;
            scene.push(iso(Vec3::new(0.2 + 0.06 * t, 0.5 + 0.03 * t.sin(), 0.4), 0.02 + 0.003 * t));
        }
        let mut coarse = unit_cube(64);
        let mut fine = unit_cube(128);
        fill_scene(&mut coarse, &scene).unwrap();
        fill_scene(&mut fine, &scene).unwrap();
        for k in 0..64 {
            for j in 0..64 {
                for i in 0..64 {
                    if coarse.get(i, j, k) {
                        let mut hit = false;
                        for d in 0..8 {
                            hit |= fine.get(2 * i + (d & 1), 2 * j + (d >> 1 & 1), 2 * k + (d >> 2));
                        }
                        assert!(hit);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_grid_never_occludes() {
        let grid = unit_cube(16);
        let x = Vec3::repeat(0.5);
        assert!(!trace_occlusion(&grid, &x, &Vec3::x(), 0.4, 64, 0.0));
        assert_eq!(direct_visibility(&grid, &x, &Vec3::z(), 0.0), 1.0);
        assert_eq!(diffuse_visibility(&grid, &x, &Vec3::z(), 128, None, 0.0, 1).unwrap(), 1.0);
    }

    #[test]
    fn slab_blocks_ray() {
        let mut grid = unit_cube(32);
        grid.fill_box(&Vec3::new(0.7, 0.0, 0.0), &Vec3::new(0.72, 1.0, 1.0));
        let x = Vec3::new(0.5, 0.5, 0.5);
        assert!(trace_occlusion(&grid, &x, &Vec3::x(), 0.42, 64, 0.0));
        assert_eq!(direct_visibility(&grid, &x, &Vec3::x(), 0.0), 0.0);
        assert!(!trace_occlusion(&grid, &x, &(-Vec3::x()), 0.42, 64, 0.0));
    }

    #[test]
    fn enclosed_point_is_dark() {
        let mut grid = unit_cube(32);
        grid.fill_box(&Vec3::zeros(), &Vec3::repeat(1.0));
        let c = Vec3::repeat(0.5);
        let v = diffuse_visibility(&grid, &c, &Vec3::z(), 128, Some(0.3), 0.0, 0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn half_space_is_fully_visible_from_its_boundary() {
        let mut grid = unit_cube(64);
        grid.fill_box(&Vec3::zeros(), &Vec3::new(1.0, 1.0, 0.49));
        let x = Vec3::new(0.5, 0.5, 0.5);
        let v = diffuse_visibility(&grid, &x, &Vec3::z(), 128, None, 0.0, 2).unwrap();
        assert!(v >= 1.0 - 2.0 / 128.0, "{v}");
    }

    #[test]
    fn raw_dump_round_trip() {
        let mut grid = unit_cube(10);
        grid.fill_box(&Vec3::new(0.1, 0.2, 0.3), &Vec3::new(0.35, 0.3, 0.9));
        let mut buf = Vec::new();
        grid.write_raw(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 125);
        let back = OccupancyGrid::read_raw(buf.as_slice()).unwrap();
        assert_eq!(back.resolution(), 10);
        assert_eq!(back.bits, grid.bits);
    }

    proptest! {
        #[test]
        fn monotone_in_t_max(
            x in prop::array::uniform3(0.1f64..0.9),
            d in prop::array::uniform3(-1.0f64..1.0),
            t in 0.05f64..0.5,
        ) {
            let d = Vec3::from(d);
            prop_assume!(d.norm() > 0.1);
            let d = d.normalize();
            let mut grid = unit_cube(32);
            grid.fill_box(&Vec3::new(0.4, 0.4, 0.4), &Vec3::new(0.6, 0.6, 0.6));
            let x = Vec3::from(x);
            // Samples at t_max/n multiples: doubling n at 2 t_max covers the
            // original sample set, so occlusion can only persist.
            if trace_occlusion(&grid, &x, &d, t, 64, 0.0) {
                prop_assert!(trace_occlusion(&grid, &x, &d, 2.0 * t, 128, 0.0));
            }
        }

        #[test]
        fn rebuild_is_deterministic(seed in 0u64..1000) {
            let mut scene = GaussianScene::new(seed);
            for k in 0..5 {
                let u = math::unit_from_seed(seed + k);
                scene.push(iso(Vec3::new(u, 1.0 - u, 0.5 * u), 0.05));
            }
            prop_assert_eq!(voxelize(&scene, 32).unwrap(), voxelize(&scene, 32).unwrap());
        }
    }
}

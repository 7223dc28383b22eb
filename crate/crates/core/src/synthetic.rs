//! Seeded synthetic scenes with known materials and lighting, used as ground
//! truth for end-to-end checks and examples.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envlight::{DfgLut, EnvironmentMap, Lighting, Prefilter, PrefilterSettings};
use crate::error::Result;
use crate::frame::Image;
use crate::indirect;
use crate::math::{self, fibonacci_sphere, orthonormal_basis, quat_from_axis_angle, quat_from_rotmat, Mat3, Rgb, Vec3};
use crate::optim::TrainView;
use crate::raster::{render, Camera, FrameBuffers, RenderMode, RenderOptions};
use crate::scene::{GaussianParams, GaussianScene};
use crate::shading::ShadingContext;

/// Ground-truth material of a point on the unit sphere.
pub fn sphere_material(n: &Vec3) -> (Rgb, f64, f64) {
    let albedo = Rgb::new(
        0.55 + 0.3 * n.z,
        0.45 + 0.25 * (2.0 * n.x).sin(),
        0.35 + 0.25 * n.y,
    );
    let roughness = 0.55 + 0.3 * (1.5 * n.x + n.y).sin();
    let metallic = if n.z > 0.35 { 0.8 } else { 0.05 };
    (albedo, roughness, metallic)
}

/// Rotation whose third column is `n`.
fn frame_for(n: &Vec3) -> math::Quat {
    let (t, b) = orthonormal_basis(n);
    let m = Mat3::from_columns(&[t, b, *n]);
    let m = if m.determinant() < 0.0 { Mat3::from_columns(&[b, t, *n]) } else { m };
    quat_from_rotmat(&m)
}

/// Flat Gaussians tiling a sphere of `radius`, normals pointing outwards,
/// with the materials of [`sphere_material`].
pub fn sphere_scene(count: usize, radius: f64, seed: u64) -> GaussianScene {
    let mut scene = GaussianScene::new(seed);
    let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt() * radius;
    for n in fibonacci_sphere(count) {
        let mut g = GaussianParams::new(n * radius, Vec3::new(0.6 * spacing, 0.6 * spacing, 0.05 * spacing), frame_for(&n));
        g.opacity_logit = math::logit(0.95);
        let (a, r, m) = sphere_material(&n);
        g.albedo = a;
        g.roughness = r;
        g.metallic = m;
        scene.push(g);
    }
    scene
}

/// Perturbed starting point for fitting `gt`: jittered positions, normals
/// tilted by up to `tilt` radians and flipped with probability `flip`,
/// neutral materials and lower opacity.
pub fn perturbed_init(gt: &GaussianScene, jitter: f64, tilt: f64, flip: f64, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(math::splitmix64(seed ^ 0x1A17));
    let mut scene = GaussianScene::new(seed);
    for g in &gt.gaussians {
        let mut h = g.clone();
        let off = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        h.position += off * jitter;
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let q = quat_from_axis_angle(&axis, rng.random_range(-tilt..=tilt));
        h.rotation = math::quat_mul(&q, &g.rotation);
        if rng.random::<f64>() < flip {
            // Half turn about the local x axis reverses the local normal.
            h.rotation = math::quat_mul(&h.rotation, &[0.0, 1.0, 0.0, 0.0]);
        }
        h.albedo = Rgb::repeat(0.5);
        h.roughness = 0.5;
        h.metallic = 0.1;
        h.opacity_logit = math::logit(0.5);
        scene.push(h);
    }
    scene
}

/// Outdoor-like environment: warm sun, sky gradient and a darker ground.
pub fn sky_env(height: usize) -> EnvironmentMap {
    let sun = Vec3::new(0.5, 0.3, 0.8).normalize();
    EnvironmentMap::from_fn(height, move |d| {
        let up = d.z.max(0.0);
        let base = Rgb::new(0.55 + 0.35 * up, 0.6 + 0.4 * up, 0.7 + 0.6 * up);
        let ground = Rgb::new(0.35, 0.3, 0.25);
        let t = (d.z * 4.0).clamp(-1.0, 1.0) * 0.5 + 0.5;
        let sky = base * t + ground * (1.0 - t);
        let s = (d.dot(&sun) - 1.0) * 12.0;
        sky + Rgb::new(2.5, 2.2, 1.8) * s.exp()
    })
}

/// A second, differently colored and oriented environment for relighting.
pub fn studio_env(height: usize) -> EnvironmentMap {
    let key = Vec3::new(-0.7, 0.5, 0.4).normalize();
    let rim = Vec3::new(0.6, -0.6, -0.2).normalize();
    EnvironmentMap::from_fn(height, move |d| {
        let k = ((d.dot(&key) - 1.0) * 6.0).exp();
        let r = ((d.dot(&rim) - 1.0) * 10.0).exp();
        Rgb::new(0.25, 0.3, 0.4) + Rgb::new(1.8, 1.5, 1.2) * k + Rgb::new(0.6, 0.9, 1.4) * r + Rgb::repeat(0.2 * (0.5 + 0.5 * d.z))
    })
}

/// `count` cameras on a sphere of radius `distance` looking at the origin,
/// with elevations kept away from the poles.
pub fn orbit_cameras(count: usize, distance: f64, width: usize, height: usize, fov_x: f64, offset: f64) -> Result<Vec<Camera>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let t = (i as f64 + 0.5) / count as f64;
            let elev = (-0.9 + 1.9 * t) * 0.5 * std::f64::consts::FRAC_PI_2 * 1.4;
            let az = golden * i as f64 + offset;
            let eye = Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()) * distance;
            Camera::look_at(eye, Vec3::zeros(), Vec3::z(), width, height, fov_x)
        })
        .collect()
}

/// Shading context for a fixed environment: prefiltered with `settings`,
/// with occlusion from the scene's own occupancy grid when `grid_res > 0`.
pub fn context_for(scene: &GaussianScene, env: &EnvironmentMap, settings: PrefilterSettings, dfg: Arc<DfgLut>, grid_res: usize) -> Result<ShadingContext> {
    let lighting: Lighting = Prefilter::new(env.width(), env.height(), settings)?.apply(env)?;
    let mut ctx = ShadingContext::new(Arc::new(lighting), dfg);
    if grid_res > 0 {
        let grid = indirect::voxelize(scene, grid_res)?;
        ctx = ctx.with_grid(Arc::new(grid));
        ctx.visibility_cache = Some(Arc::new(ctx.compute_visibility_cache(scene)?));
    }
    Ok(ctx)
}

/// Renders training views with straight (unpremultiplied) color and alpha.
pub fn render_views(scene: &GaussianScene, ctx: &ShadingContext, cameras: &[Camera]) -> Result<Vec<TrainView>> {
    let opts = RenderOptions {
        mode: RenderMode::Shaded,
        background: Rgb::zeros(),
        masking: true,
    };
    cameras
        .iter()
        .map(|cam| {
            let fb = render(scene, cam, ctx, &opts)?;
            Ok(view_from_buffers(*cam, &fb))
        })
        .collect()
}

fn view_from_buffers(camera: Camera, fb: &FrameBuffers) -> TrainView {
    let pixels = fb
        .color
        .iter()
        .zip(&fb.alpha)
        .map(|(c, a)| if *a > 0.0 { c / *a } else { Rgb::zeros() })
        .collect();
    TrainView {
        camera,
        image: Image {
            width: fb.width,
            height: fb.height,
            pixels,
        },
        alpha: Some(fb.alpha.clone()),
    }
}

/// Mean angle in degrees between rendered normals of `pred` and `truth`
/// over pixels where the truth alpha exceeds 0.5. Predicted normals are
/// renormalized; pixels with no predicted normal count as 180 degrees.
pub fn normal_error_degrees(pred: &FrameBuffers, truth: &FrameBuffers) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..truth.alpha.len() {
        if truth.alpha[p] <= 0.5 {
            continue;
        }
        let t = truth.normal[p].normalize();
        let cos = match pred.normal[p].try_normalize(1e-9) {
            Some(q) => q.dot(&t).clamp(-1.0, 1.0),
            None => -1.0,
        };
        sum += cos.acos().to_degrees();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Everything describing one synthetic capture.
pub struct SyntheticCapture {
    pub truth: GaussianScene,
    pub env: EnvironmentMap,
    pub train: Vec<TrainView>,
    pub test: Vec<TrainView>,
}

/// Sphere scene rendered from `train_views` orbit cameras plus `test_views`
/// held-out cameras at interleaved azimuths.
pub fn sphere_capture(
    gaussians: usize,
    train_views: usize,
    test_views: usize,
    size: usize,
    env_height: usize,
    settings: PrefilterSettings,
    dfg: Arc<DfgLut>,
    seed: u64,
) -> Result<SyntheticCapture> {
    let truth = sphere_scene(gaussians, 1.0, seed);
    let env = sky_env(env_height);
    let ctx = context_for(&truth, &env, settings, dfg, indirect::DEFAULT_GRID_RES)?;
    let fov = 0.7;
    let train = render_views(&truth, &ctx, &orbit_cameras(train_views, 4.0, size, size, fov, 0.0)?)?;
    let test = render_views(&truth, &ctx, &orbit_cameras(test_views, 4.0, size, size, fov, 1.3)?)?;
    Ok(SyntheticCapture { truth, env, train, test })
}

//! EWA projection of 3D Gaussians to screen-space splats, and its adjoint.

use crate::error::Result;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::scene::GaussianParams;

use super::camera::{Camera, NEAR_PLANE};

/// Isotropic screen-space low-pass added to every projected covariance.
pub const LOW_PASS: f64 = 0.3;
/// Splats are cut off outside this Mahalanobis radius.
pub const CUTOFF_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    /// Pixel coordinates; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub mean: [f64; 2],
    /// Upper triangle `(A, B, C)` of the 2x2 covariance, low-pass included.
    pub cov: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// False when the Gaussian is masked (faces away from the camera).
    pub mask: bool,
    /// Inclusive pixel range covered by the 3-sigma ellipse bounding box:
    /// `[x0, x1, y0, y1]`.
    pub pixels: [usize; 4],
    /// Mean in camera space.
    pub view_mean: Vec3,
}

impl Splat2D {
    /// Mahalanobis distance squared of a pixel center.
    #[inline]
    pub fn mahalanobis2(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Rows of the perspective Jacobian at camera-space point `t`.
fn jacobian(cam: &Camera, t: &Vec3) -> (Vec3, Vec3) {
    let iz = 1.0 / t.z;
    (
        Vec3::new(cam.fx * iz, 0.0, -cam.fx * t.x * iz * iz),
        Vec3::new(0.0, cam.fy * iz, -cam.fy * t.y * iz * iz),
    )
}

/// Projects one Gaussian; `None` when behind the near plane or when its
/// 3-sigma footprint covers no pixel center.
pub fn project_gaussian(g: &GaussianParams, index: usize, cam: &Camera) -> Result<Option<Splat2D>> {
    let r = g.rotation_matrix()?;
    let t = cam.to_camera(&g.position);
    if t.z <= NEAR_PLANE {
        return Ok(None);
    }
    let m = r * Mat3::from_diagonal(&g.scale());
    let sigma = m * m.transpose();
    let w = cam.view_rotation();
    let v = w * sigma * w.transpose();
    let (j0, j1) = jacobian(cam, &t);
    let a = j0.dot(&(v * j0)) + LOW_PASS;
    let b = j0.dot(&(v * j1));
    let c = j1.dot(&(v * j1)) + LOW_PASS;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Ok(None);
    }
    let conic = [c / det, -b / det, a / det];
    let mean = cam.project(&t);
    let ex = CUTOFF_SIGMA * a.sqrt();
    let ey = CUTOFF_SIGMA * c.sqrt();
    let Some(pixels) = pixel_range(mean, ex, ey, cam.width, cam.height) else {
        return Ok(None);
    };
    Ok(Some(Splat2D {
        index,
        mean,
        cov: [a, b, c],
        conic,
        depth: t.z,
        opacity: g.opacity(),
        mask: true,
        pixels,
        view_mean: t,
    }))
}

/// Pixels whose centers fall inside `mean ± (ex, ey)`, clipped to the image.
fn pixel_range(mean: [f64; 2], ex: f64, ey: f64, width: usize, height: usize) -> Option<[usize; 4]> {
    let span = |m: f64, e: f64, n: usize| -> Option<(usize, usize)> {
        let lo = (m - e - 0.5).ceil().max(0.0);
        let hi = (m + e - 0.5).floor().min(n as f64 - 1.0);
        if !(lo <= hi) {
            return None;
        }
        Some((lo as usize, hi as usize))
    };
    let (x0, x1) = span(mean[0], ex, width)?;
    let (y0, y1) = span(mean[1], ey, height)?;
    Some([x0, x1, y0, y1])
}

/// Gradients of one Gaussian's geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGrad {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
}

/// Adjoint of [`project_gaussian`] for the mean, conic and depth outputs.
pub fn project_backward(
    g: &GaussianParams,
    cam: &Camera,
    splat: &Splat2D,
    d_mean: [f64; 2],
    d_conic: [f64; 3],
    d_depth: f64,
) -> Result<ProjectionGrad> {
    let r = g.rotation_matrix()?;
    let s = g.scale();
    let m = r * Mat3::from_diagonal(&s);
    let sigma = m * m.transpose();
    let w = cam.view_rotation();
    let v = w * sigma * w.transpose();
    let t = splat.view_mean;
    let (j0, j1) = jacobian(cam, &t);
    let [a, b, c] = splat.cov;
    let det = a * c - b * b;
    let d2 = det * det;
    let [ga, gb, gc] = d_conic;
    // Conic (C, -B, A) / det differentiated w.r.t. A, B, C.
    let d_a = ga * (-c * c / d2) + gb * (b * c / d2) + gc * (-b * b / d2);
    let d_b = ga * (2.0 * b * c / d2) + gb * (-(a * c + b * b) / d2) + gc * (2.0 * a * b / d2);
    let d_c = ga * (-b * b / d2) + gb * (a * b / d2) + gc * (-a * a / d2);

    // Through Sigma: A = t0' S t0, B = t0' S t1, C = t1' S t1 with t_k = W' j_k.
    let t0 = w.transpose() * j0;
    let t1 = w.transpose() * j1;
    let gmat = t0 * t0.transpose() * d_a + t0 * t1.transpose() * d_b + t1 * t1.transpose() * d_c;
    let d_m = (gmat + gmat.transpose()) * m;
    let d_r = d_m * Mat3::from_diagonal(&s);
    let rt_dm = r.transpose() * d_m;
    let d_log_scale = Vec3::new(rt_dm[(0, 0)] * s.x, rt_dm[(1, 1)] * s.y, rt_dm[(2, 2)] * s.z);
    let d_q = math::quat_to_rotmat_vjp(&g.rotation, &d_r)?;

    // Through the Jacobian rows j0, j1 (functions of t).
    let dj0 = v * j0 * (2.0 * d_a) + v * j1 * d_b;
    let dj1 = v * j0 * d_b + v * j1 * (2.0 * d_c);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_t = Vec3::zeros();
    d_t.x += dj0.z * (-cam.fx * iz2);
    d_t.z += dj0.x * (-cam.fx * iz2) + dj0.z * (2.0 * cam.fx * t.x * iz3);
    d_t.y += dj1.z * (-cam.fy * iz2);
    d_t.z += dj1.y * (-cam.fy * iz2) + dj1.z * (2.0 * cam.fy * t.y * iz3);

    // Through the projected mean and the depth.
    d_t.x += d_mean[0] * cam.fx * iz;
    d_t.y += d_mean[1] * cam.fy * iz;
    d_t.z += -d_mean[0] * cam.fx * t.x * iz2 - d_mean[1] * cam.fy * t.y * iz2 + d_depth;

    Ok(ProjectionGrad {
        position: w.transpose() * d_t,
        log_scale: d_log_scale,
        rotation: d_q,
    })
}

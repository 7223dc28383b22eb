//! Pinhole camera. Internally x points right, y down and z forward; poses
//! in the Blender/OpenGL convention (y up, z backward) are converted on load.

use serde::{Deserialize, Serialize};

use crate::error::{GirError, Result};
use crate::math::{Mat3, Vec3};

/// Objects closer than this along the view axis are culled.
pub const NEAR_PLANE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Mat3,
    /// Camera center in world space.
    pub position: Vec3,
}

/// Focal length in pixels from a horizontal field of view.
pub fn focal_from_fov(width: usize, camera_angle_x: f64) -> f64 {
    width as f64 / (2.0 * (0.5 * camera_angle_x).tan())
}

fn flip_yz() -> Mat3 {
    Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))
}

impl Camera {
    pub fn new(width: usize, height: usize, fx: f64, fy: f64, rotation: Mat3, position: Vec3) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation,
            position,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(GirError::invalid("camera image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GirError::invalid("focal lengths must be positive"));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
        if !(ortho < 1e-6) || !(r.determinant() > 0.0) || !self.position.iter().all(|v| v.is_finite()) {
            return Err(GirError::invalid("camera rotation must be a proper rotation"));
        }
        Ok(())
    }

    /// From a Blender/OpenGL camera-to-world matrix (row-major 4x4).
    pub fn from_opengl_c2w(c2w: &[[f64; 4]; 4], width: usize, height: usize, camera_angle_x: f64) -> Result<Self> {
        let r_gl = Mat3::from_fn(|i, j| c2w[i][j]);
        let t = Vec3::new(c2w[0][3], c2w[1][3], c2w[2][3]);
        if !(camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI) {
            return Err(GirError::invalid("camera_angle_x must lie in (0, pi)"));
        }
        let f = focal_from_fov(width, camera_angle_x);
        Self::new(width, height, f, f, r_gl * flip_yz(), t)
    }

    /// Inverse of [`Camera::from_opengl_c2w`] for the pose part.
    pub fn to_opengl_c2w(&self) -> [[f64; 4]; 4] {
        let r = self.rotation * flip_yz();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[(i, j)];
            }
            m[i][3] = self.position[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Horizontal field of view implied by `fx`.
    pub fn camera_angle_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan()
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, camera_angle_x: f64) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| GirError::invalid("eye equals target"))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GirError::invalid("up is parallel to the view direction"))?;
        let y = z.cross(&x);
        let f = focal_from_fov(width, camera_angle_x);
        Self::new(width, height, f, f, Mat3::from_columns(&[x, y, z]), eye)
    }

    /// World-to-camera rotation.
    pub fn view_rotation(&self) -> Mat3 {
        self.rotation.transpose()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// Pixel coordinates (continuous, pixel centers at +0.5) of a camera-space
    /// point.
    pub fn project(&self, t: &Vec3) -> [f64; 2] {
        [self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy]
    }

    /// Same intrinsics, different image size (principal point rescaled).
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_formula() {
        let f = focal_from_fov(800, 0.6911112);
        assert!((f - 1111.11).abs() < 0.01, "{f}");
    }

    #[test]
    fn identity_pose_looks_down_negative_z() {
        let id = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let cam = Camera::from_opengl_c2w(&id, 64, 48, 0.8).unwrap();
        assert_eq!(cam.position, Vec3::zeros());
        assert_eq!(cam.rotation.column(2).into_owned(), Vec3::new(0.0, 0.0, -1.0));
        let t = cam.to_camera(&Vec3::new(0.0, 0.0, -3.0));
        assert!(t.z > 0.0);
        let p = cam.project(&t);
        assert_eq!(p, [32.0, 24.0]);
        // A point above the optical axis lands in the upper half of the image.
        let up = cam.project(&cam.to_camera(&Vec3::new(0.0, 1.0, -3.0)));
        assert!(up[1] < 24.0);
        assert_eq!(cam.to_opengl_c2w(), id);
    }

    #[test]
    fn look_at_matches_pose_round_trip() {
        let cam = Camera::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::z(), 32, 32, 0.7).unwrap();
        let back = Camera::from_opengl_c2w(&cam.to_opengl_c2w(), 32, 32, cam.camera_angle_x()).unwrap();
        assert!((back.rotation - cam.rotation).abs().max() < 1e-12);
        assert!((back.fx - cam.fx).abs() < 1e-9);
        let t = cam.to_camera(&Vec3::zeros());
        let p = cam.project(&t);
        assert!((p[0] - 16.0).abs() < 1e-9 && (p[1] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid() {
        assert!(Camera::new(0, 4, 1.0, 1.0, Mat3::identity(), Vec3::zeros()).is_err());
        assert!(Camera::new(4, 4, -1.0, 1.0, Mat3::identity(), Vec3::zeros()).is_err());
        assert!(Camera::new(4, 4, 1.0, 1.0, Mat3::identity() * 2.0, Vec3::zeros()).is_err());
    }
}

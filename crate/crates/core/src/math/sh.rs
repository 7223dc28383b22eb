//! Real spherical harmonics up to degree 3 in the basis and sign convention
//! used by 3D Gaussian splatting exporters.

use crate::error::{GirError, Result};

use super::{Rgb, Vec3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;
pub const SH_COUNT: usize = 16;

/// Per-channel SH coefficients. Storage is always sized for degree 3; the
/// entries beyond `(degree + 1)^2` are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShCoeffs {
    degree: usize,
    pub coeffs: [[f64; 3]; SH_COUNT],
}

impl ShCoeffs {
    pub fn zeros(degree: usize) -> Result<Self> {
        if degree > MAX_SH_DEGREE {
            return Err(GirError::UnsupportedShDegree(degree));
        }
        Ok(Self {
            degree,
            coeffs: [[0.0; 3]; SH_COUNT],
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for ShCoeffs {
    fn default() -> Self {
        Self {
            degree: MAX_SH_DEGREE,
            coeffs: [[0.0; 3]; SH_COUNT],
        }
    }
}

/// All 16 basis values at `d` (assumed unit length).
pub fn sh_basis(d: &Vec3) -> [f64; SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial w.r.t. (x, y, z), treating
/// the components as independent.
pub fn sh_basis_grad(d: &Vec3) -> [[f64; 3]; SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0],
        [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ],
        [
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ],
        [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ],
        [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * (-2.0 * y * z),
            SH_C3[5] * (xx - yy),
        ],
        [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * (-6.0 * x * y),
            0.0,
        ],
    ]
}

pub fn sh_eval(coeffs: &ShCoeffs, dir: &Vec3) -> Rgb {
    let basis = sh_basis(dir);
    let mut out = Rgb::zeros();
    for (b, c) in basis.iter().zip(&coeffs.coeffs).take(coeffs.len()) {
        out += Rgb::new(c[0], c[1], c[2]) * *b;
    }
    out
}

/// Gradient of `upstream · sh_eval(coeffs, dir)` w.r.t. the coefficients and
/// the (unnormalized) direction components.
pub fn sh_eval_vjp(coeffs: &ShCoeffs, dir: &Vec3, upstream: &Rgb) -> ([[f64; 3]; SH_COUNT], Vec3) {
    let basis = sh_basis(dir);
    let grad = sh_basis_grad(dir);
    let mut d_coeffs = [[0.0; 3]; SH_COUNT];
    let mut d_dir = Vec3::zeros();
    for k in 0..coeffs.len() {
        for c in 0..3 {
            d_coeffs[k][c] = upstream[c] * basis[k];
        }
        let w = upstream[0] * coeffs.coeffs[k][0]
            + upstream[1] * coeffs.coeffs[k][1]
            + upstream[2] * coeffs.coeffs[k][2];
        d_dir += Vec3::new(grad[k][0], grad[k][1], grad[k][2]) * w;
    }
    (d_coeffs, d_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(rng: &mut ChaCha8Rng) -> ShCoeffs {
        let mut c = ShCoeffs::default();
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                c.coeffs[k][ch] = rng.random_range(-1.0..1.0);
            }
        }
        c
    }

    #[test]
    fn degree_zero_constant() {
        let mut c = ShCoeffs::zeros(0).unwrap();
        c.coeffs[0] = [1.0; 3];
        let v = sh_eval(&c, &Vec3::new(0.3, 0.4, 0.5).normalize());
        assert!((v - Rgb::repeat(0.282_094_79)).abs().max() < 1e-8);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let c = ShCoeffs::zeros(3).unwrap();
        assert_eq!(sh_eval(&c, &Vec3::z()), Rgb::zeros());
    }

    #[test]
    fn degree_above_three_rejected() {
        assert!(matches!(
            ShCoeffs::zeros(4),
            Err(GirError::UnsupportedShDegree(4))
        ));
    }

    #[test]
    fn linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_coeffs(&mut rng);
        let b = random_coeffs(&mut rng);
        let mut sum = a;
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                sum.coeffs[k][ch] += b.coeffs[k][ch];
            }
        }
        let d = Vec3::new(-0.2, 0.7, 0.4).normalize();
        let lhs = sh_eval(&a, &d) + sh_eval(&b, &d);
        assert!((lhs - sh_eval(&sum, &d)).abs().max() < 1e-12);
    }

    #[test]
    fn degree_one_rotates_like_a_vector() {
        // Degree-1 band is linear in the direction: rotating the coefficient
        // vector (-c3, -c1, c2) with the direction leaves the value unchanged.
        let mut c = ShCoeffs::zeros(1).unwrap();
        let v = Vec3::new(0.3, -0.4, 0.8);
        c.coeffs[1] = [-v.y; 3];
        c.coeffs[2] = [v.z; 3];
        c.coeffs[3] = [-v.x; 3];
        let d = Vec3::new(0.1, 0.9, -0.3).normalize();
        let expected = SH_C1 * v.dot(&d);
        assert!((sh_eval(&c, &d).x - expected).abs() < 1e-14);
        let rot = crate::math::quat_to_rotmat(&[0.9, 0.1, -0.3, 0.2]).unwrap();
        let (vr, dr) = (rot * v, rot * d);
        let mut cr = ShCoeffs::zeros(1).unwrap();
        cr.coeffs[1] = [-vr.y; 3];
        cr.coeffs[2] = [vr.z; 3];
        cr.coeffs[3] = [-vr.x; 3];
        assert!((sh_eval(&cr, &dr).x - expected).abs() < 1e-14);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vec3::new(0.3, -0.5, 0.6);
        let g = sh_basis_grad(&d);
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += 1e-6;
            dm[axis] -= 1e-6;
            let (bp, bm) = (sh_basis(&dp), sh_basis(&dm));
            for k in 0..SH_COUNT {
                let fd = (bp[k] - bm[k]) / 2e-6;
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }
}

//! Numeric primitives shared across the renderer: rotations, spherical
//! harmonics, tone mapping, reflection, GGX helpers and deterministic
//! low-discrepancy sampling.

pub mod ggx;
pub mod sh;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{GirError, Result};

pub use sh::ShCoeffs;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// Linear or display RGB triple.
pub type Rgb = Vector3<f64>;

/// Rotation as a (w, x, y, z) quaternion. Stored unnormalized in trainable
/// parameters; every consumer normalizes on use.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize_quat(q: &Quat) -> Result<Quat> {
    let n = quat_norm(q);
    if !(n > 1e-12) || !n.is_finite() {
        return Err(GirError::ZeroQuaternion);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of `q` (normalized internally). Columns are the rotated
/// x, y, z axes, i.e. the ellipsoid axes of a Gaussian.
pub fn quat_to_rotmat(q: &Quat) -> Result<Mat3> {
    let [w, x, y, z] = normalize_quat(q)?;
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw quaternion,
/// including the normalization Jacobian.
pub fn quat_to_rotmat_vjp(q: &Quat, d_r: &Mat3) -> Result<Quat> {
    let norm = quat_norm(q);
    let [w, x, y, z] = normalize_quat(q)?;
    let g = |i: usize, j: usize| d_r[(i, j)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let qh = [w, x, y, z];
    let dq = [dw, dx, dy, dz];
    let proj: f64 = qh.iter().zip(&dq).map(|(a, b)| a * b).sum();
    Ok([
        (dw - w * proj) / norm,
        (dx - x * proj) / norm,
        (dy - y * proj) / norm,
        (dz - z * proj) / norm,
    ])
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

/// Quaternion of a proper rotation matrix (Shepperd's method).
pub fn quat_from_rotmat(m: &Mat3) -> Quat {
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let n = quat_norm(&q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToneMapParams {
    pub gamma: f64,
    pub exposure: f64,
}

impl Default for ToneMapParams {
    fn default() -> Self {
        Self {
            gamma: 2.4,
            exposure: 0.0,
        }
    }
}

/// Gamma-encodes linear radiance: `clamp01(c * 2^exposure)^(1/gamma)`.
pub fn tonemap(linear: &Rgb, params: &ToneMapParams) -> Rgb {
    let k = params.exposure.exp2();
    linear.map(|c| (c * k).clamp(0.0, 1.0).powf(1.0 / params.gamma))
}

/// Per-channel derivative of [`tonemap`]; zero where the clamp is active.
pub fn tonemap_grad(linear: &Rgb, params: &ToneMapParams) -> Rgb {
    let k = params.exposure.exp2();
    let inv = 1.0 / params.gamma;
    linear.map(|c| {
        let y = c * k;
        if y <= 0.0 || y >= 1.0 {
            0.0
        } else {
            inv * y.max(1e-8).powf(inv - 1.0) * k
        }
    })
}

/// Mirror reflection of the outgoing direction about `n`.
pub fn reflect(n: &Vec3, wo: &Vec3) -> Result<Vec3> {
    let c = n.dot(wo);
    if c <= 0.0 {
        return Err(GirError::BackFace);
    }
    Ok(reflect_unchecked(n, wo))
}

#[inline]
pub fn reflect_unchecked(n: &Vec3, wo: &Vec3) -> Vec3 {
    2.0 * n.dot(wo) * n - wo
}

/// Tangent frame `(t, b)` completing unit `n` to a right-handed basis.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

/// Local-frame vector (z = normal) expressed in world space.
#[inline]
pub fn local_to_world(local: &Vec3, n: &Vec3) -> Vec3 {
    let (t, b) = orthonormal_basis(n);
    local.x * t + local.y * b + local.z * n
}

/// SplitMix64 step; used to derive decorrelated offsets from a seed.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform real in [0, 1) derived from `seed`.
pub fn unit_from_seed(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn radical_inverse_base2(i: u32) -> f64 {
    i.reverse_bits() as f64 / 4_294_967_296.0
}

/// Hammersley point `i` of `n`, Cranley–Patterson rotated by a seed-derived
/// offset so different seeds give decorrelated but deterministic patterns.
pub fn hammersley(i: u32, n: u32, seed: u64) -> (f64, f64) {
    let (o1, o2) = if seed == 0 {
        (0.0, 0.0)
    } else {
        (unit_from_seed(seed), unit_from_seed(seed ^ 0xA5A5_5A5A))
    };
    let u = ((i as f64 + 0.5) / n as f64 + o1).fract();
    let v = (radical_inverse_base2(i) + o2).fract();
    (u, v)
}

/// Deterministic uniform-hemisphere directions around `n`: a Fibonacci
/// spiral in the local frame, spun about `n` by a seed-derived angle.
pub fn sample_hemisphere(n: &Vec3, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    if count == 0 {
        return Err(GirError::invalid("sample_hemisphere: count must be >= 1"));
    }
    let n = n.normalize();
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let spin = unit_from_seed(seed);
    Ok((0..count)
        .map(|k| {
            let z = 1.0 - (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * PI * (k as f64 * golden + spin).fract();
            local_to_world(&Vec3::new(r * phi.cos(), r * phi.sin(), z), &n)
        })
        .collect())
}

/// Deterministic Fibonacci lattice over the full sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * PI * (k as f64 * golden).fract();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Gradient of `v / |v|` pulled back to `v`.
#[inline]
pub fn normalize_vjp(v: &Vec3, d_unit: &Vec3) -> Vec3 {
    let len = v.norm();
    let u = v / len;
    (d_unit - u * u.dot(d_unit)) / len
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_quat() -> impl Strategy<Value = Quat> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |q| quat_norm(q) > 0.1)
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotmat(&IDENTITY_QUAT).unwrap();
        assert!((r - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            quat_to_rotmat(&[0.0; 4]),
            Err(GirError::ZeroQuaternion)
        ));
    }

    #[test]
    fn ninety_degrees_about_x_matches_composed_rotations() {
        let h = std::f64::consts::FRAC_PI_4;
        let q90 = [h.cos(), h.sin(), 0.0, 0.0];
        let q45 = quat_from_axis_angle(&Vec3::x(), h);
        let composed = quat_to_rotmat(&q45).unwrap() * quat_to_rotmat(&q45).unwrap();
        let direct = quat_to_rotmat(&q90).unwrap();
        assert!((composed - direct).abs().max() < 1e-12);
        // Rotating +z by 90 degrees about +x lands on -y.
        let z_col = direct.column(2);
        assert!((z_col - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotmat_vjp_matches_finite_differences() {
        let q = [0.3, -0.5, 0.7, 0.2];
        let weights = Mat3::new(0.3, -1.0, 0.2, 0.5, 0.9, -0.4, 0.1, 0.7, -0.6);
        let f = |q: &Quat| quat_to_rotmat(q).unwrap().component_mul(&weights).sum();
        let g = quat_to_rotmat_vjp(&q, &weights).unwrap();
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += 1e-6;
            qm[k] -= 1e-6;
            let fd = (f(&qp) - f(&qm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "component {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn rotmat_roundtrip_through_quaternion() {
        let q = normalize_quat(&[0.2, 0.4, -0.8, 0.1]).unwrap();
        let r = quat_to_rotmat(&q).unwrap();
        let back = quat_to_rotmat(&quat_from_rotmat(&r)).unwrap();
        assert!((r - back).abs().max() < 1e-12);
    }

    #[test]
    fn tonemap_examples() {
        let p = ToneMapParams::default();
        assert_eq!(tonemap(&Rgb::zeros(), &p), Rgb::zeros());
        assert_eq!(tonemap(&Rgb::repeat(1.0), &p), Rgb::repeat(1.0));
        let half = tonemap(&Rgb::repeat(0.5), &p);
        assert!((half.x - 0.5f64.powf(1.0 / 2.4)).abs() < 1e-15);
        assert!((half.x - 0.7492).abs() < 1e-4);
    }

    #[test]
    fn reflect_examples() {
        let n = Vec3::z();
        assert_eq!(reflect(&n, &Vec3::z()).unwrap(), Vec3::z());
        let wo = Vec3::new(1.0, 0.0, 1.0).normalize();
        let wi = reflect(&n, &wo).unwrap();
        assert!((wi - Vec3::new(-1.0, 0.0, 1.0).normalize()).norm() < 1e-15);
        assert!(matches!(
            reflect(&n, &Vec3::new(0.0, 0.0, -1.0)),
            Err(GirError::BackFace)
        ));
    }

    #[test]
    fn hemisphere_samples_are_deterministic_and_front_facing() {
        let n = Vec3::z();
        let a = sample_hemisphere(&n, 128, 7).unwrap();
        let b = sample_hemisphere(&n, 128, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 128);
        assert!(a.iter().all(|d| d.z > 0.0));
        assert!(sample_hemisphere(&n, 0, 7).is_err());
    }

    #[test]
    fn hemisphere_mean_cosine_is_one_half() {
        // Uniform hemisphere density 1/(2 pi): E[cos] = 1/2.
        let n = Vec3::new(0.3, -0.2, 0.9).normalize();
        let s = sample_hemisphere(&n, 4096, 3).unwrap();
        let mean = s.iter().map(|d| d.dot(&n)).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!(s.iter().all(|d| d.dot(&n) > 0.0 && (d.norm() - 1.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn rotmat_is_proper_orthonormal(q in rand_quat()) {
            let r = quat_to_rotmat(&q).unwrap();
            prop_assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tonemap_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = ToneMapParams::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let tl = tonemap(&Rgb::repeat(lo), &p).x;
            let th = tonemap(&Rgb::repeat(hi), &p).x;
            prop_assert!(tl <= th);
            prop_assert!((0.0..=1.0).contains(&tl) && (0.0..=1.0).contains(&th));
        }

        #[test]
        fn reflect_is_an_involution(
            n in prop::array::uniform3(-1.0f64..1.0),
            w in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let n = Vec3::from(n);
            let w = Vec3::from(w);
            prop_assume!(n.norm() > 0.1 && w.norm() > 0.1);
            let n = n.normalize();
            let w = w.normalize();
            prop_assume!(n.dot(&w) > 1e-3);
            let wi = reflect(&n, &w).unwrap();
            prop_assert!((wi.norm() - 1.0).abs() < 1e-12);
            prop_assert!((n.dot(&wi) - n.dot(&w)).abs() < 1e-12);
            prop_assert!((reflect(&n, &wi).unwrap() - w).norm() < 1e-12);
        }
    }
}

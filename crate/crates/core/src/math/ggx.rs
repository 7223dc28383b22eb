//! GGX / Trowbridge-Reitz microfacet helpers (isotropic, alpha = roughness^2).

use std::f64::consts::PI;

use super::{Rgb, Vec3};

/// Smallest GGX alpha used anywhere; keeps the distribution finite at r = 0.
pub const MIN_ALPHA: f64 = 1e-4;

pub fn alpha_from_roughness(r: f64) -> f64 {
    (r * r).max(MIN_ALPHA)
}

/// Normal distribution `D(h)`.
pub fn distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Smith Lambda for the GGX distribution.
pub fn smith_lambda(cos_theta: f64, alpha: f64) -> f64 {
    let c2 = (cos_theta * cos_theta).max(1e-14);
    let tan2 = ((1.0 - c2) / c2).max(0.0);
    0.5 * (-1.0 + (1.0 + alpha * alpha * tan2).sqrt())
}

/// Height-correlated Smith masking-shadowing `G2(v, l)`.
pub fn smith_g2(n_dot_v: f64, n_dot_l: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(n_dot_v, alpha) + smith_lambda(n_dot_l, alpha))
}

pub fn schlick_weight(v_dot_h: f64) -> f64 {
    (1.0 - v_dot_h.clamp(0.0, 1.0)).powi(5)
}

pub fn fresnel_schlick(f0: &Rgb, v_dot_h: f64) -> Rgb {
    let w = schlick_weight(v_dot_h);
    f0.map(|f| f + (1.0 - f) * w)
}

/// Dielectric/metal base reflectance of the metallic-roughness workflow.
pub fn base_reflectance(albedo: &Rgb, metallic: f64) -> Rgb {
    albedo.map(|a| 0.04 * (1.0 - metallic) + a * metallic)
}

/// Half vector in the local frame (z = normal) sampled proportionally to
/// `D(h) (n·h)` from the uniform pair `(u1, u2)`.
pub fn sample_half_vector(u1: f64, u2: f64, alpha: f64) -> Vec3 {
    let a2 = alpha * alpha;
    let cos_t = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).max(0.0).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_normalizes_over_projected_hemisphere() {
        // Integral of D(h)(n.h) over the hemisphere is 1.
        for &alpha in &[0.1, 0.4, 0.9] {
            let nt = 4000;
            let mut acc = 0.0;
            for i in 0..nt {
                let t = (i as f64 + 0.5) / nt as f64 * 0.5 * PI;
                acc += distribution(t.cos(), alpha) * t.cos() * t.sin() * 2.0 * PI;
            }
            acc *= 0.5 * PI / nt as f64;
            assert!((acc - 1.0).abs() < 1e-3, "alpha {alpha}: {acc}");
        }
    }

    #[test]
    fn g2_is_one_at_normal_incidence() {
        assert!((smith_g2(1.0, 1.0, 0.5) - 1.0).abs() < 1e-12);
        assert!(smith_g2(0.1, 0.2, 0.5) < 1.0);
    }
}

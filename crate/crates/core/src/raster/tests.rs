use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envlight::{build_dfg_lut, DfgLut, EnvironmentMap, Lighting, Prefilter, PrefilterSettings};
use crate::math::{quat_from_axis_angle, IDENTITY_QUAT};
use crate::scene::GaussianParams;

fn lut() -> Arc<DfgLut> {
    static LUT: OnceLock<Arc<DfgLut>> = OnceLock::new();
    LUT.get_or_init(|| Arc::new(build_dfg_lut(32).unwrap())).clone()
}

fn lighting() -> Arc<Lighting> {
    static L: OnceLock<Arc<Lighting>> = OnceLock::new();
    L.get_or_init(|| {
        let env = EnvironmentMap::from_fn(16, |d| Rgb::new(1.0 + 0.5 * d.z, 0.8 + 0.3 * d.x, 0.6 + 0.2 * d.y));
        let settings = PrefilterSettings {
            specular_levels: 4,
            specular_samples: 16,
            irradiance_height: 8,
            irradiance_samples: 32,
            ..PrefilterSettings::default()
        };
        Arc::new(Prefilter::new(env.width(), env.height(), settings).unwrap().apply(&env).unwrap())
    })
    .clone()
}

fn ctx() -> ShadingContext {
    ShadingContext::new(lighting(), lut())
}

fn camera(w: usize, h: usize) -> Camera {
    Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), w, h, 0.8).unwrap()
}

fn disk(pos: Vec3, radius: f64, opacity: f64, albedo: Rgb) -> GaussianParams {
    let mut g = GaussianParams::new(pos, Vec3::new(radius, radius, 0.01), IDENTITY_QUAT);
    g.opacity_logit = math::logit(opacity);
    g.albedo = albedo;
    g
}

fn albedo_opts() -> RenderOptions {
    RenderOptions {
        mode: RenderMode::Albedo,
        ..RenderOptions::default()
    }
}

#[test]
fn opaque_splat_clamps_to_max_alpha() {
    let mut scene = GaussianScene::new(0);
    scene.push(disk(Vec3::zeros(), 0.3, 0.9999, Rgb::new(0.2, 0.4, 0.6)));
    let cam = camera(16, 16);
    let opts = RenderOptions {
        background: Rgb::repeat(1.0),
        ..albedo_opts()
    };
    let fb = render(&scene, &cam, &ctx(), &opts).unwrap();
    // The splat mean sits on the corner between pixels 7 and 8; pixel (8, 8)
    // has center offset (0.5, 0.5) so the falloff is below one.
    let sp = project_gaussian(&scene.gaussians[0], 0, &cam).unwrap().unwrap();
    let m2 = sp.mahalanobis2(8.5, 8.5);
    let alpha = (0.9999 * (-0.5 * m2).exp()).min(MAX_ALPHA);
    let p = 8 * 16 + 8;
    let expect = Rgb::new(0.2, 0.4, 0.6) * alpha + Rgb::repeat(1.0 - alpha);
    assert!((fb.color[p] - expect).norm() < 1e-12, "{:?} vs {:?}", fb.color[p], expect);
    assert!((fb.alpha[p] - alpha).abs() < 1e-12);
}

#[test]
fn single_splat_at_pixel_center() {
    let mut scene = GaussianScene::new(0);
    let cam = camera(17, 17);
    scene.push(disk(Vec3::zeros(), 0.3, 0.9999, Rgb::new(0.2, 0.4, 0.6)));
    let fb = render(&scene, &cam, &ctx(), &albedo_opts()).unwrap();
    let p = 8 * 17 + 8;
    assert!((fb.color[p] - Rgb::new(0.2, 0.4, 0.6) * 0.99).norm() < 1e-12);
    assert!((fb.alpha[p] - 0.99).abs() < 1e-12);
}

#[test]
fn two_splats_composite_front_to_back() {
    let mut scene = GaussianScene::new(0);
    let cam = camera(17, 17);
    scene.push(disk(Vec3::new(0.0, 0.0, -0.5), 0.3, 0.5, Rgb::new(0.0, 1.0, 0.0)));
    scene.push(disk(Vec3::new(0.0, 0.0, 0.5), 0.3, 0.5, Rgb::new(1.0, 0.0, 0.0)));
    let bg = Rgb::new(0.0, 0.0, 1.0);
    let opts = RenderOptions {
        background: bg,
        ..albedo_opts()
    };
    let fb = render(&scene, &cam, &ctx(), &opts).unwrap();
    let p = 8 * 17 + 8;
    let expect = Rgb::new(0.5, 0.25, 0.25);
    assert!((fb.color[p] - expect).norm() < 1e-12, "{:?}", fb.color[p]);
    assert!((fb.alpha[p] - 0.75).abs() < 1e-12);
    let d_front = 2.5;
    let d_back = 3.5;
    assert!((fb.depth[p] - (0.5 * d_front + 0.25 * d_back)).abs() < 1e-12);
}

#[test]
fn masked_splat_shows_back_color() {
    let mut scene = GaussianScene::new(7);
    let cam = camera(17, 17);
    let mut g = disk(Vec3::zeros(), 0.3, 0.9999, Rgb::repeat(0.5));
    g.rotation = quat_from_axis_angle(&Vec3::x(), std::f64::consts::PI);
    scene.push(g);
    let back = scene.gaussians[0].back_color;
    let fb = render(&scene, &cam, &ctx(), &RenderOptions::default()).unwrap();
    let p = 8 * 17 + 8;
    assert!((fb.color[p] - back * 0.99).norm() < 1e-12);
    assert_eq!(fb.normal[p], Vec3::zeros());
    assert!(fb.depth[p] > 0.0);

    let unmasked = RenderOptions {
        masking: false,
        ..RenderOptions::default()
    };
    let fb = render(&scene, &cam, &ctx(), &unmasked).unwrap();
    assert!((fb.color[p] - back * 0.99).norm() > 1e-3);
}

#[test]
fn render_mode_names_round_trip() {
    for m in [
        RenderMode::Shaded,
        RenderMode::Albedo,
        RenderMode::Normal,
        RenderMode::Roughness,
        RenderMode::Metallic,
        RenderMode::Depth,
    ] {
        assert_eq!(m.name().parse::<RenderMode>().unwrap(), m);
    }
    assert!("bogus".parse::<RenderMode>().is_err());
}

#[test]
fn empty_scene_renders_background() {
    let scene = GaussianScene::new(0);
    let opts = RenderOptions {
        background: Rgb::new(0.1, 0.2, 0.3),
        ..RenderOptions::default()
    };
    let fb = render(&scene, &camera(8, 5), &ctx(), &opts).unwrap();
    assert!(fb.color.iter().all(|c| *c == Rgb::new(0.1, 0.2, 0.3)));
    assert!(fb.alpha.iter().all(|a| *a == 0.0));
}

fn random_scene(seed: u64, n: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = GaussianScene::new(seed);
    for _ in 0..n {
        let pos = Vec3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let scale = Vec3::new(rng.random_range(0.03..0.3), rng.random_range(0.03..0.3), rng.random_range(0.005..0.05));
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let q = quat_from_axis_angle(&axis.normalize(), rng.random_range(-1.2..1.2));
        let mut g = GaussianParams::new(pos, scale, q);
        g.opacity_logit = rng.random_range(-2.0..3.0);
        g.albedo = Rgb::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        g.roughness = rng.random_range(0.1..0.9);
        g.metallic = rng.random_range(0.0..1.0);
        for c in g.indirect_sh.coeffs.iter_mut() {
            *c = [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
        }
        scene.push(g);
    }
    scene
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiled_matches_reference(seed in 0u64..1000, n in 1usize..40, w in 8usize..40, h in 8usize..40) {
        let scene = random_scene(seed, n);
        let cam = camera(w, h);
        let opts = RenderOptions { background: Rgb::new(0.3, 0.2, 0.1), ..RenderOptions::default() };
        let a = render(&scene, &cam, &ctx(), &opts).unwrap();
        let b = render_reference(&scene, &cam, &ctx(), &opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn alpha_and_color_stay_bounded(seed in 0u64..1000, n in 1usize..40) {
        let scene = random_scene(seed, n);
        let fb = render(&scene, &camera(24, 24), &ctx(), &albedo_opts()).unwrap();
        for (c, a) in fb.color.iter().zip(&fb.alpha) {
            prop_assert!((0.0..1.0).contains(a));
            prop_assert!(c.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }
}

#[test]
fn bins_are_depth_sorted() {
    let scene = random_scene(3, 60);
    let cam = camera(48, 32);
    let (_, tape) = render_with_tape(&scene, &cam, &ctx(), &RenderOptions::default()).unwrap();
    assert_eq!(tape.bins.lists.len(), 3 * 2);
    for list in &tape.bins.lists {
        for pair in list.windows(2) {
            let (a, b) = (&tape.splats[pair[0] as usize], &tape.splats[pair[1] as usize]);
            assert!(a.depth < b.depth || (a.depth == b.depth && a.index < b.index));
        }
    }
}

/// Weighted sum of every output buffer so all backward paths are exercised.
fn weighted_loss(fb: &FrameBuffers, wts: &PixelGrads) -> f64 {
    let mut l = 0.0;
    for p in 0..fb.color.len() {
        l += fb.color[p].dot(&wts.color[p]);
        l += fb.normal[p].dot(&wts.normal[p]);
        l += fb.albedo[p].dot(&wts.albedo[p]);
        l += fb.roughness[p] * wts.roughness[p] + fb.metallic[p] * wts.metallic[p];
    }
    l
}

fn random_weights(n: usize, seed: u64) -> PixelGrads {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v3 = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let color = (0..n).map(|_| v3()).collect();
    let normal = (0..n).map(|_| v3()).collect();
    let albedo = (0..n).map(|_| v3()).collect();
    let roughness = (0..n).map(|_| v3().x).collect();
    let metallic = (0..n).map(|_| v3().y).collect();
    PixelGrads {
        color,
        normal,
        albedo,
        roughness,
        metallic,
    }
}

fn check_gradients(mode: RenderMode) {
    let mut scene = GaussianScene::new(11);
    let mut g0 = disk(Vec3::new(0.1, -0.05, 0.0), 0.35, 0.7, Rgb::new(0.7, 0.4, 0.3));
    g0.rotation = quat_from_axis_angle(&Vec3::new(1.0, 0.5, 0.0).normalize(), 0.4);
    g0.log_scale = Vec3::new(0.4f64.ln(), 0.25f64.ln(), 0.02f64.ln());
    g0.roughness = 0.4;
    g0.metallic = 0.3;
    for c in g0.indirect_sh.coeffs.iter_mut() {
        *c = [0.1, 0.05, 0.02];
    }
    scene.push(g0);
    let mut g1 = disk(Vec3::new(-0.15, 0.1, -0.4), 0.3, 0.6, Rgb::new(0.2, 0.6, 0.5));
    g1.rotation = quat_from_axis_angle(&Vec3::new(0.0, 1.0, 0.3).normalize(), -0.5);
    g1.roughness = 0.6;
    g1.metallic = 0.7;
    scene.push(g1);

    let cam = camera(16, 16);
    let ctx = ctx();
    let opts = RenderOptions {
        mode,
        background: Rgb::new(0.2, 0.3, 0.4),
        masking: true,
    };
    let wts = random_weights(256, 5);
    let (_, tape) = render_with_tape(&scene, &cam, &ctx, &opts).unwrap();
    let grads = render_backward(&scene, &ctx, &tape, &wts).unwrap();

    let eps = 1e-6;
    for gi in 0..scene.len() {
        for k in 0..26 {
            let mut plus = scene.clone();
            let mut minus = scene.clone();
            let mut p = plus.gaussians[gi].to_flat();
            p[k] += eps;
            plus.gaussians[gi].set_flat(&p);
            let mut m = minus.gaussians[gi].to_flat();
            m[k] -= eps;
            minus.gaussians[gi].set_flat(&m);
            let lp = weighted_loss(&render(&plus, &cam, &ctx, &opts).unwrap(), &wts);
            let lm = weighted_loss(&render(&minus, &cam, &ctx, &opts).unwrap(), &wts);
            let fd = (lp - lm) / (2.0 * eps);
            let an = grads.gaussians[gi][k];
            assert!(
                (fd - an).abs() <= 1e-4 + 1e-3 * fd.abs().max(an.abs()),
                "{mode:?} gaussian {gi} param {k}: fd {fd} analytic {an}"
            );
        }
    }
    assert!(grads.visible.iter().all(|v| *v));
    assert!(grads.mean2d.iter().all(|m| m[0] != 0.0 || m[1] != 0.0));
}

#[test]
fn backward_matches_finite_differences_shaded() {
    check_gradients(RenderMode::Shaded);
}

#[test]
fn backward_matches_finite_differences_albedo() {
    check_gradients(RenderMode::Albedo);
}

#[test]
fn backward_matches_finite_differences_normal() {
    check_gradients(RenderMode::Normal);
}

#[test]
fn lighting_gradient_matches_finite_differences() {
    let scene = random_scene(21, 12);
    let cam = camera(16, 16);
    let base = ctx();
    let opts = RenderOptions::default();
    let wts = random_weights(256, 9);
    let (_, tape) = render_with_tape(&scene, &cam, &base, &opts).unwrap();
    let grads = render_backward(&scene, &base, &tape, &wts).unwrap();
    let eps = 1e-6;
    let perturbed = |f: &dyn Fn(&mut Lighting)| {
        let mut l = (*lighting()).clone();
        f(&mut l);
        let mut c = ctx();
        c.lighting = Arc::new(l);
        weighted_loss(&render(&scene, &cam, &c, &opts).unwrap(), &wts)
    };
    let mut checked = 0;
    for t in 0..grads.lighting.irradiance.len() {
        for ch in 0..3 {
            let an = grads.lighting.irradiance[t][ch];
            if an == 0.0 {
                continue;
            }
            let lp = perturbed(&|l| l.irradiance.texels_mut()[t][ch] += eps);
            let lm = perturbed(&|l| l.irradiance.texels_mut()[t][ch] -= eps);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - an).abs() < 1e-5 + 1e-4 * an.abs(), "irradiance {t}/{ch}: {fd} vs {an}");
            checked += 1;
        }
    }
    for lvl in 0..grads.lighting.specular.len() {
        for t in (0..grads.lighting.specular[lvl].len()).step_by(3) {
            let an = grads.lighting.specular[lvl][t][1];
            if an == 0.0 {
                continue;
            }
            let lp = perturbed(&|l| l.specular.levels[lvl].texels_mut()[t][1] += eps);
            let lm = perturbed(&|l| l.specular.levels[lvl].texels_mut()[t][1] -= eps);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - an).abs() < 1e-5 + 1e-4 * an.abs(), "specular {lvl}/{t}: {fd} vs {an}");
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn backward_is_deterministic() {
    let scene = random_scene(4, 30);
    let cam = camera(32, 24);
    let (_, tape) = render_with_tape(&scene, &cam, &ctx(), &RenderOptions::default()).unwrap();
    let wts = random_weights(32 * 24, 1);
    let a = render_backward(&scene, &ctx(), &tape, &wts).unwrap();
    let b = render_backward(&scene, &ctx(), &tape, &wts).unwrap();
    assert_eq!(a.gaussians, b.gaussians);
    assert_eq!(a.lighting.irradiance, b.lighting.irradiance);
}

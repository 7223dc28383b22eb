//! Per-Gaussian physically based color: Lambertian diffuse from the
//! irradiance map plus split-sum GGX specular, with voxel-traced occlusion
//! switching the specular radiance to a learned SH indirect term.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::envlight::{DfgLut, Lighting, LightingGrad};
use crate::error::Result;
use crate::indirect::{self, OccupancyGrid, DEFAULT_DIFFUSE_RAYS, DEFAULT_RAY_SAMPLES};
use crate::math::sh::{sh_eval, sh_eval_vjp, ShCoeffs, SH_COUNT};
use crate::math::{self, ggx, Rgb, ToneMapParams, Vec3};
use crate::scene::{shortest_axis, GaussianParams};

/// Everything needed to shade: prefiltered light, the DFG table and the
/// optional occupancy grid for occlusion queries.
#[derive(Debug, Clone)]
pub struct ShadingContext {
    pub lighting: Arc<Lighting>,
    pub dfg: Arc<DfgLut>,
    pub grid: Option<Arc<OccupancyGrid>>,
    pub tonemap: ToneMapParams,
    /// Trace reflection rays and fall back to the SH term when blocked.
    pub enable_indirect: bool,
    /// Scale irradiance by the hemisphere visibility fraction.
    pub enable_diffuse_occlusion: bool,
    pub diffuse_rays: usize,
    pub visibility_seed: u64,
    /// Per-Gaussian diffuse visibility computed at the last grid rebuild;
    /// used instead of tracing when its length matches the scene.
    pub visibility_cache: Option<Arc<Vec<f64>>>,
}

impl ShadingContext {
    /// Unoccluded context: no grid, occlusion terms disabled.
    pub fn new(lighting: Arc<Lighting>, dfg: Arc<DfgLut>) -> Self {
        Self {
            lighting,
            dfg,
            grid: None,
            tonemap: ToneMapParams::default(),
            enable_indirect: false,
            enable_diffuse_occlusion: false,
            diffuse_rays: DEFAULT_DIFFUSE_RAYS,
            visibility_seed: 0,
            visibility_cache: None,
        }
    }

    pub fn with_grid(mut self, grid: Arc<OccupancyGrid>) -> Self {
        self.grid = Some(grid);
        self.enable_indirect = true;
        self.enable_diffuse_occlusion = true;
        self
    }

    /// Whether the mirror ray from `g` along `dir` hits occupied voxels.
    pub fn reflection_occluded(&self, g: &GaussianParams, dir: &Vec3) -> bool {
        match (&self.grid, self.enable_indirect) {
            (Some(grid), true) => {
                let t_max = grid.bounding_sphere().exit_distance(&g.position, dir);
                indirect::trace_occlusion(grid, &g.position, dir, t_max, DEFAULT_RAY_SAMPLES, 3.0 * g.max_scale())
            }
            _ => false,
        }
    }

    /// Hemisphere visibility around `normal`; 1 without a grid.
    pub fn diffuse_visibility(&self, g: &GaussianParams, normal: &Vec3) -> f64 {
        match (&self.grid, self.enable_diffuse_occlusion) {
            (Some(grid), true) => indirect::diffuse_visibility(
                grid,
                &g.position,
                normal,
                self.diffuse_rays,
                None,
                3.0 * g.max_scale(),
                self.visibility_seed,
            )
            .unwrap_or(1.0),
            _ => 1.0,
        }
    }

    /// Diffuse visibility of scene member `index`, from the cache when valid.
    pub fn visibility_of(&self, index: usize, scene_len: usize, g: &GaussianParams, normal: &Vec3) -> f64 {
        if !self.enable_diffuse_occlusion || self.grid.is_none() {
            return 1.0;
        }
        match &self.visibility_cache {
            Some(cache) if cache.len() == scene_len => cache[index],
            _ => self.diffuse_visibility(g, normal),
        }
    }

    /// Traces diffuse visibility for every Gaussian of `scene`.
    pub fn compute_visibility_cache(&self, scene: &crate::scene::GaussianScene) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        scene
            .gaussians
            .par_iter()
            .map(|g| Ok(self.diffuse_visibility(g, &crate::scene::unravel_normal(g)?)))
            .collect()
    }
}

/// Reference Disney-style BRDF value `f(ω_i, ω_o)` (used as a test oracle).
/// Grazing denominators are clamped at 1e-7.
pub fn brdf_eval(a: &Rgb, r: f64, m: f64, n: &Vec3, wi: &Vec3, wo: &Vec3) -> Rgb {
    let ni = n.dot(wi).max(1e-7);
    let no = n.dot(wo).max(1e-7);
    let h = (wi + wo).normalize();
    let alpha = ggx::alpha_from_roughness(r);
    let d = ggx::distribution(n.dot(&h).max(0.0), alpha);
    let g = ggx::smith_g2(no, ni, alpha);
    let f = ggx::fresnel_schlick(&ggx::base_reflectance(a, m), wo.dot(&h));
    a * ((1.0 - m) / PI) + f * (d * g / (4.0 * ni * no))
}

/// `a (1 - m) vis E(n)`, with `E` the normalized irradiance map.
pub fn shade_diffuse(a: &Rgb, m: f64, n: &Vec3, lighting: &Lighting, visibility: f64) -> Rgb {
    let e = lighting.irradiance.sample(n);
    a.component_mul(&e) * ((1.0 - m) * visibility)
}

/// Split-sum specular for a front-facing point; errors on back faces.
#[allow(clippy::too_many_arguments)]
pub fn shade_specular(
    a: &Rgb,
    r: f64,
    m: f64,
    n: &Vec3,
    wo: &Vec3,
    lighting: &Lighting,
    dfg: &DfgLut,
    occluded: bool,
    indirect_sh: &ShCoeffs,
) -> Result<Rgb> {
    let refl = math::reflect(n, wo)?;
    let radiance = if occluded {
        sh_eval(indirect_sh, wo)
    } else {
        lighting.specular.sample(&refl, r)
    };
    let s = dfg.sample(n.dot(wo), r);
    let f0 = ggx::base_reflectance(a, m);
    Ok(radiance.component_mul(&(f0 * s.scale + Rgb::repeat(s.bias))))
}

/// Linear shaded color of a Gaussian seen from `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaded {
    pub color: Rgb,
    /// False when the normal faces away from the camera (mask bit 0).
    pub front_facing: bool,
}

/// Shades `g` as seen from `origin`, querying occlusion from `ctx`.
pub fn shade(g: &GaussianParams, origin: &Vec3, ctx: &ShadingContext) -> Result<Shaded> {
    let n = crate::scene::unravel_normal(g)?;
    let wo = (origin - g.position).normalize();
    let front_facing = n.dot(&wo) > 0.0;
    let refl = math::reflect_unchecked(&n, &wo);
    let occ = Occlusion {
        occluded: ctx.reflection_occluded(g, &refl),
        visibility: ctx.diffuse_visibility(g, &n),
    };
    let surf = Surface::of(g, n, wo);
    let rec = ShadeRecord::forward(&surf, &occ, &g.indirect_sh, &ctx.lighting, &ctx.dfg);
    Ok(Shaded {
        color: rec.color,
        front_facing,
    })
}

/// Material and geometry at one shading point.
#[derive(Debug, Clone, Copy)]
pub struct Surface {
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    pub normal: Vec3,
    /// Unit direction towards the camera.
    pub view: Vec3,
}

impl Surface {
    pub fn of(g: &GaussianParams, normal: Vec3, view: Vec3) -> Self {
        Self {
            albedo: g.albedo,
            roughness: g.roughness,
            metallic: g.metallic,
            normal,
            view,
        }
    }
}

/// Occlusion state, constant with respect to every parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    pub occluded: bool,
    pub visibility: f64,
}

impl Default for Occlusion {
    fn default() -> Self {
        Self {
            occluded: false,
            visibility: 1.0,
        }
    }
}

/// Forward values kept for the backward pass.
pub struct ShadeRecord {
    pub color: Rgb,
    surf: Surface,
    occ: Occlusion,
    irr: crate::envlight::map::Lookup,
    spec: Option<crate::envlight::prefilter::MipLookup>,
    sh_radiance: Rgb,
    dfg: crate::envlight::dfg::DfgSample,
}

/// Gradients w.r.t. the shading inputs.
#[derive(Debug, Clone, Copy)]
pub struct ShadeGrad {
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    pub normal: Vec3,
    pub view: Vec3,
    pub sh: [[f64; 3]; SH_COUNT],
}

impl ShadeRecord {
    /// `ĉ = diffuse + specular` for any orientation. Back faces use the
    /// unflipped normal; the DFG cosine clamps at the table edge.
    pub fn forward(surf: &Surface, occ: &Occlusion, sh: &ShCoeffs, lighting: &Lighting, dfg: &DfgLut) -> Self {
        let irr = lighting.irradiance.lookup(&surf.normal);
        let kd = surf.albedo * ((1.0 - surf.metallic) * occ.visibility);
        let diffuse = kd.component_mul(&irr.value);
        let d = dfg.sample(surf.normal.dot(&surf.view), surf.roughness);
        let f0 = ggx::base_reflectance(&surf.albedo, surf.metallic);
        let weight = f0 * d.scale + Rgb::repeat(d.bias);
        let (spec, radiance, sh_radiance) = if occ.occluded {
            let v = sh_eval(sh, &surf.view);
            (None, v, v)
        } else {
            let refl = math::reflect_unchecked(&surf.normal, &surf.view);
            let l = lighting.specular.lookup(&refl, surf.roughness);
            let v = l.value;
            (Some(l), v, Rgb::zeros())
        };
        Self {
            color: diffuse + radiance.component_mul(&weight),
            surf: *surf,
            occ: *occ,
            irr,
            spec,
            sh_radiance,
            dfg: d,
        }
    }

    /// Pulls `d_color` back to the inputs; light gradients accumulate in
    /// `light_grad`.
    pub fn backward(&self, d_color: &Rgb, sh: &ShCoeffs, lighting: &Lighting, light_grad: &mut LightingGrad) -> ShadeGrad {
        let s = &self.surf;
        let vis = self.occ.visibility;
        let mut g = ShadeGrad {
            albedo: Rgb::zeros(),
            roughness: 0.0,
            metallic: 0.0,
            normal: Vec3::zeros(),
            view: Vec3::zeros(),
            sh: [[0.0; 3]; SH_COUNT],
        };

        // Diffuse.
        let kd = s.albedo * ((1.0 - s.metallic) * vis);
        let d_e = d_color.component_mul(&kd);
        self.irr.scatter(&mut light_grad.irradiance, &d_e);
        g.normal += self.irr.dir_grad(lighting.irradiance.texels(), &d_e);
        let d_kd = d_color.component_mul(&self.irr.value);
        g.albedo += d_kd * ((1.0 - s.metallic) * vis);
        g.metallic -= d_kd.dot(&s.albedo) * vis;

        // Specular weight F0 * A + B.
        let f0 = ggx::base_reflectance(&s.albedo, s.metallic);
        let weight = f0 * self.dfg.scale + Rgb::repeat(self.dfg.bias);
        let radiance = match &self.spec {
            Some(l) => l.value,
            None => self.sh_radiance,
        };
        let d_w = d_color.component_mul(&radiance);
        let d_rad = d_color.component_mul(&weight);
        let d_f0 = d_w * self.dfg.scale;
        let d_scale = d_w.dot(&f0);
        let d_bias = d_w.sum();
        g.albedo += d_f0 * s.metallic;
        g.metallic += d_f0.dot(&(s.albedo - Rgb::repeat(0.04)));
        let d_cos = d_scale * self.dfg.d_cos[0] + d_bias * self.dfg.d_cos[1];
        g.roughness += d_scale * self.dfg.d_roughness[0] + d_bias * self.dfg.d_roughness[1];
        g.normal += s.view * d_cos;
        g.view += s.normal * d_cos;

        // Prefiltered or indirect radiance.
        match &self.spec {
            Some(l) => {
                let (d_refl, d_r) = l.backward(&lighting.specular, &d_rad, &mut light_grad.specular);
                g.roughness += d_r;
                let c = s.normal.dot(&s.view);
                g.normal += 2.0 * (c * d_refl + d_refl.dot(&s.normal) * s.view);
                g.view += 2.0 * d_refl.dot(&s.normal) * s.normal - d_refl;
            }
            None => {
                let (d_sh, d_dir) = sh_eval_vjp(sh, &s.view, &d_rad);
                g.sh = d_sh;
                g.view += d_dir;
            }
        }
        g
    }
}

/// Gradients of a Gaussian's shading pulled back to its own parameters.
#[derive(Debug, Clone, Copy)]
pub struct GaussianShadeGrad {
    pub position: Vec3,
    pub rotation: math::Quat,
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    pub sh: [[f64; 3]; SH_COUNT],
}

/// Chains [`ShadeGrad`] through the normal (a rotation column) and the view
/// direction (a function of the position).
pub fn pull_back_to_gaussian(g: &GaussianParams, origin: &Vec3, sg: &ShadeGrad) -> Result<GaussianShadeGrad> {
    let axis = shortest_axis(&g.log_scale);
    let mut d_r = math::Mat3::zeros();
    d_r.set_column(axis, &sg.normal);
    let d_q = math::quat_to_rotmat_vjp(&g.rotation, &d_r)?;
    let d_pos = -math::normalize_vjp(&(origin - g.position), &sg.view);
    Ok(GaussianShadeGrad {
        position: d_pos,
        rotation: d_q,
        albedo: sg.albedo,
        roughness: sg.roughness,
        metallic: sg.metallic,
        sh: sg.sh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::{build_dfg_lut, EnvironmentMap, Prefilter, PrefilterSettings};
    use crate::math::IDENTITY_QUAT;
    use std::sync::OnceLock;

    fn lut() -> Arc<DfgLut> {
        static LUT: OnceLock<Arc<DfgLut>> = OnceLock::new();
        LUT.get_or_init(|| Arc::new(build_dfg_lut(32).unwrap())).clone()
    }

    fn lighting(env: &EnvironmentMap) -> Lighting {
        let settings = PrefilterSettings {
            specular_samples: 32,
            irradiance_samples: 64,
            ..PrefilterSettings::default()
        };
        Prefilter::new(env.width(), env.height(), settings).unwrap().apply(env).unwrap()
    }

    fn sky(d: &Vec3) -> Rgb {
        Rgb::new(1.0 + 0.5 * d.z, 0.8 + 0.3 * d.x, 0.6 + 0.2 * d.y * d.z)
    }

    #[test]
    fn unit_furnace_diffuse() {
        let l = lighting(&EnvironmentMap::constant(16, Rgb::repeat(1.0)));
        let n = Vec3::new(0.3, -0.2, 0.9).normalize();
        let c = shade_diffuse(&Rgb::repeat(1.0), 0.0, &n, &l, 1.0);
        assert!((c - Rgb::repeat(1.0)).abs().max() < 1e-9);
        assert_eq!(shade_diffuse(&Rgb::repeat(1.0), 1.0, &n, &l, 1.0), Rgb::zeros());
        let half = shade_diffuse(&Rgb::new(0.2, 0.5, 0.9), 0.0, &n, &l, 0.5);
        let full = shade_diffuse(&Rgb::new(0.2, 0.5, 0.9), 0.0, &n, &l, 1.0);
        assert_eq!(half * 2.0, full);
    }

    #[test]
    fn specular_cases() {
        let l = lighting(&EnvironmentMap::constant(16, Rgb::repeat(2.0)));
        let n = Vec3::z();
        let wo = Vec3::new(0.4, 0.0, 0.9).normalize();
        let sh = ShCoeffs::default();
        let occ = shade_specular(&Rgb::repeat(0.5), 0.5, 0.3, &n, &wo, &l, &lut(), true, &sh).unwrap();
        assert_eq!(occ, Rgb::zeros());
        assert!(shade_specular(&Rgb::repeat(0.5), 0.5, 0.3, &n, &(-wo), &l, &lut(), false, &sh).is_err());
        let spec = shade_specular(&Rgb::zeros(), 0.5, 0.0, &n, &wo, &l, &lut(), false, &sh).unwrap();
        assert!(spec.min() > 0.0);
        // Constant env: radiance term is the constant itself.
        let s = lut().sample(n.dot(&wo), 0.5);
        let expect = 2.0 * (0.04 * s.scale + s.bias);
        assert!((spec.x - expect).abs() < 1e-9);
    }

    #[test]
    fn matte_white_gaussian_under_unit_env() {
        let l = Arc::new(lighting(&EnvironmentMap::constant(16, Rgb::repeat(1.0))));
        let ctx = ShadingContext::new(l, lut());
        let mut g = GaussianParams::new(Vec3::zeros(), Vec3::new(0.1, 0.1, 0.01), IDENTITY_QUAT);
        g.albedo = Rgb::repeat(1.0);
        g.roughness = 1.0;
        g.metallic = 0.0;
        let s = shade(&g, &Vec3::new(0.0, 0.0, 3.0), &ctx).unwrap();
        assert!(s.front_facing);
        assert!(s.color.iter().all(|&c| (1.0..=1.05).contains(&c)), "{:?}", s.color);
        let back = shade(&g, &Vec3::new(0.0, 0.0, -3.0), &ctx).unwrap();
        assert!(!back.front_facing);
    }

    #[test]
    fn shading_is_linear_in_light() {
        let env = EnvironmentMap::from_fn(16, sky);
        let l1 = Arc::new(lighting(&env));
        let l2 = Arc::new(lighting(&env.scaled(2.0)));
        let mut g = GaussianParams::new(Vec3::zeros(), Vec3::new(0.1, 0.05, 0.01), IDENTITY_QUAT);
        g.albedo = Rgb::new(0.7, 0.3, 0.2);
        g.metallic = 0.4;
        g.roughness = 0.35;
        let o = Vec3::new(1.0, 0.5, 2.0);
        let a = shade(&g, &o, &ShadingContext::new(l1, lut())).unwrap().color;
        let b = shade(&g, &o, &ShadingContext::new(l2, lut())).unwrap().color;
        assert!((b - 2.0 * a).abs().max() < 1e-12 * a.max().max(1.0));
    }

    // The diffuse and split-sum specular lobes are not energy-coupled: each
    // stays below one, and their sum stays below 1.05 only near normal view.
    #[test]
    fn energy_bound_under_unit_env() {
        let l = lighting(&EnvironmentMap::constant(16, Rgb::repeat(1.0)));
        for k in 0..200 {
            let r = math::unit_from_seed(k);
            let m = math::unit_from_seed(k + 1000);
            let cosv = 0.02 + 0.98 * math::unit_from_seed(k + 2000);
            let wo = Vec3::new((1.0 - cosv * cosv).sqrt(), 0.0, cosv);
            let surf = Surface {
                albedo: Rgb::repeat(1.0),
                roughness: r,
                metallic: m,
                normal: Vec3::z(),
                view: wo,
            };
            let c = ShadeRecord::forward(&surf, &Occlusion::default(), &ShCoeffs::default(), &l, &lut()).color;
            let d = lut().sample(cosv, r);
            assert!(d.scale + d.bias <= 1.0 + 1e-9);
            assert!(c.max() <= (1.0 - m) + d.scale + d.bias + 1e-9);
            if cosv >= 0.9 {
                assert!(c.max() <= 1.05, "r {r} m {m} cos {cosv}: {c:?}");
            }
        }
    }

    #[test]
    fn brdf_reciprocity_and_lambert() {
        let n = Vec3::z();
        let a = Rgb::new(0.8, 0.4, 0.1);
        for k in 0..20 {
            let wi = math::sample_hemisphere(&n, 20, k).unwrap()[k as usize];
            let wo = math::sample_hemisphere(&n, 20, k + 7).unwrap()[(k as usize * 7) % 20];
            let f1 = brdf_eval(&a, 0.4, 0.3, &n, &wi, &wo);
            let f2 = brdf_eval(&a, 0.4, 0.3, &n, &wo, &wi);
            assert!((f1 - f2).abs().max() < 1e-12);
        }
        // At r = 1, m = 0 and normal incidence the specular lobe is small but
        // nonzero; the diffuse part alone is a / pi.
        let f = brdf_eval(&a, 1.0, 0.0, &n, &n, &n);
        let spec = f - a / PI;
        assert!(spec.iter().all(|&s| s > 0.0 && s < 0.02));
    }

    #[test]
    fn brdf_white_furnace_bounded() {
        let n = Vec3::z();
        // Conductors: the specular lobe alone, at most one.
        for &r in &[0.2, 0.5, 0.8, 1.0] {
            let wo = Vec3::new(0.6, 0.0, 0.8);
            let count = 16384;
            let dirs = math::sample_hemisphere(&n, count, 3).unwrap();
            let mut acc = Rgb::zeros();
            for wi in &dirs {
                acc += brdf_eval(&Rgb::repeat(1.0), r, 1.0, &n, wi, &wo) * wi.z;
            }
            acc *= 2.0 * PI / count as f64;
            assert!(acc.max() <= 1.0 + 1e-2, "{r}: {acc:?}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let env = EnvironmentMap::from_fn(16, sky);
        let l = lighting(&env);
        let mut sh = ShCoeffs::default();
        for k in 0..16 {
            sh.coeffs[k] = [0.1 * (k as f64).sin(), 0.05 * k as f64 / 16.0, -0.02];
        }
        let up = Rgb::new(0.3, -0.7, 0.5);
        for occluded in [false, true] {
            let occ = Occlusion {
                occluded,
                visibility: 0.8,
            };
            let base = Surface {
                albedo: Rgb::new(0.6, 0.3, 0.8),
                roughness: 0.37,
                metallic: 0.42,
                normal: Vec3::new(0.2, -0.3, 0.93),
                view: Vec3::new(0.5, 0.2, 0.84),
            };
            let f = |s: &Surface| up.dot(&ShadeRecord::forward(s, &occ, &sh, &l, &lut()).color);
            let rec = ShadeRecord::forward(&base, &occ, &sh, &l, &lut());
            let mut lg = LightingGrad::zeros_like(&l);
            let g = rec.backward(&up, &sh, &l, &mut lg);
            let h = 1e-6;
            let check = |name: &str, an: f64, fd: f64| {
                assert!((an - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{name} occ={occluded}: {an} vs {fd}");
            };
            for c in 0..3 {
                let (mut p, mut m) = (base, base);
                p.albedo[c] += h;
                m.albedo[c] -= h;
                check("albedo", g.albedo[c], (f(&p) - f(&m)) / (2.0 * h));
                let (mut p, mut m) = (base, base);
                p.normal[c] += h;
                m.normal[c] -= h;
                check("normal", g.normal[c], (f(&p) - f(&m)) / (2.0 * h));
                let (mut p, mut m) = (base, base);
                p.view[c] += h;
                m.view[c] -= h;
                check("view", g.view[c], (f(&p) - f(&m)) / (2.0 * h));
            }
            let (mut p, mut m) = (base, base);
            p.roughness += h;
            m.roughness -= h;
            check("roughness", g.roughness, (f(&p) - f(&m)) / (2.0 * h));
            let (mut p, mut m) = (base, base);
            p.metallic += h;
            m.metallic -= h;
            check("metallic", g.metallic, (f(&p) - f(&m)) / (2.0 * h));
            if occluded {
                let (mut sp, mut sm) = (sh.clone(), sh.clone());
                sp.coeffs[5][1] += h;
                sm.coeffs[5][1] -= h;
                let fs = |sh: &ShCoeffs| up.dot(&ShadeRecord::forward(&base, &occ, sh, &l, &lut()).color);
                check("sh", g.sh[5][1], (fs(&sp) - fs(&sm)) / (2.0 * h));
            } else {
                // Light gradient: perturb one texel of the second specular level.
                let idx = lg.specular[1].iter().position(|v| v.norm() > 0.0).unwrap();
                let mut lp = l.clone();
                let mut lm = l.clone();
                lp.specular.levels[1].texels_mut()[idx].y += h;
                lm.specular.levels[1].texels_mut()[idx].y -= h;
                let fl = |l: &Lighting| up.dot(&ShadeRecord::forward(&base, &occ, &sh, l, &lut()).color);
                check("light", lg.specular[1][idx].y, (fl(&lp) - fl(&lm)) / (2.0 * h));
            }
        }
    }

    #[test]
    fn occlusion_switches_to_sh() {
        let l = Arc::new(lighting(&EnvironmentMap::constant(16, Rgb::repeat(1.0))));
        let mut grid = OccupancyGrid::with_bounds(32, Vec3::repeat(-2.0), 4.0).unwrap();
        // A wall above the Gaussian blocks the mirror direction for a camera
        // straight above it.
        grid.fill_box(&Vec3::new(-2.0, -2.0, 1.0), &Vec3::new(2.0, 2.0, 1.2));
        let ctx = ShadingContext::new(l.clone(), lut()).with_grid(Arc::new(grid));
        let mut g = GaussianParams::new(Vec3::zeros(), Vec3::new(0.1, 0.1, 0.01), IDENTITY_QUAT);
        g.albedo = Rgb::zeros();
        let refl = Vec3::z();
        assert!(ctx.reflection_occluded(&g, &refl));
        let vis = ctx.diffuse_visibility(&g, &Vec3::z());
        assert!(vis < 0.7, "{vis}");
        let s = shade(&g, &Vec3::new(0.0, 0.0, 0.5), &ctx).unwrap();
        assert_eq!(s.color, Rgb::zeros());
    }
}

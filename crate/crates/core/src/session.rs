//! Rendering a trained scene under arbitrary lighting and material
//! overrides. The command line and the HTTP service both go through
//! [`RenderSession`], so identical requests produce identical bytes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envlight::{build_dfg_lut, DfgLut, EnvironmentMap, Lighting, Prefilter, PrefilterSettings};
use crate::error::{GirError, Result};
use crate::frame::Image;
use crate::indirect::{self, OccupancyGrid};
use crate::io::{encode_png, Checkpoint};
use crate::math::{Rgb, ToneMapParams};
use crate::raster::{render, Camera, FrameBuffers, RenderMode, RenderOptions};
use crate::scene::{unravel_normal, GaussianParams, GaussianScene};
use crate::shading::ShadingContext;

/// Scene-wide material edit: roughness and metallic offsets and an albedo
/// multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialOverrides {
    pub d_roughness: f64,
    pub d_metallic: f64,
    pub albedo_tint: [f64; 3],
}

impl Default for MaterialOverrides {
    fn default() -> Self {
        Self {
            d_roughness: 0.0,
            d_metallic: 0.0,
            albedo_tint: [1.0; 3],
        }
    }
}

impl MaterialOverrides {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d_roughness.is_finite() && self.d_metallic.is_finite() && self.albedo_tint.iter().all(|t| t.is_finite() && *t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GirError::invalid("overrides must be finite with a positive albedo tint"))
        }
    }

    /// The edit undoing this one.
    pub fn inverse(&self) -> Self {
        Self {
            d_roughness: -self.d_roughness,
            d_metallic: -self.d_metallic,
            albedo_tint: self.albedo_tint.map(|t| 1.0 / t),
        }
    }

    /// Unclamped edit of one Gaussian.
    pub fn apply(&self, g: &mut GaussianParams) {
        g.roughness += self.d_roughness;
        g.metallic += self.d_metallic;
        g.albedo = g.albedo.component_mul(&Rgb::from(self.albedo_tint));
    }

    /// Edited copy of `scene` with materials clamped to their valid ranges.
    pub fn applied(&self, scene: &GaussianScene) -> GaussianScene {
        let mut out = scene.clone();
        if self.is_identity() {
            return out;
        }
        for g in &mut out.gaussians {
            self.apply(g);
            g.albedo = g.albedo.map(|a| a.clamp(0.0, 1.0));
            g.roughness = g.roughness.clamp(0.0, 1.0);
            g.metallic = g.metallic.clamp(0.0, 1.0);
        }
        out
    }
}

/// Which Gaussians a material edit touches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    All,
    /// Centers inside an axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Attribute strictly above (`greater`) or below a threshold.
    Attribute { attr: MaterialAttr, greater: bool, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialAttr {
    Roughness,
    Metallic,
    Opacity,
}

impl std::str::FromStr for Selection {
    type Err = GirError;

    /// `all`, `box:x0,y0,z0,x1,y1,z1`, or `<attr><op><value>` with attr one
    /// of roughness, metallic, opacity and op `<` or `>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Selection::All);
        }
        if let Some(rest) = s.strip_prefix("box:") {
            let v: Vec<f64> = rest
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| GirError::invalid(format!("bad box selection `{s}`")))?;
            if v.len() != 6 {
                return Err(GirError::invalid(format!("box selection needs 6 numbers, got {}", v.len())));
            }
            return Ok(Selection::Box {
                min: [v[0], v[1], v[2]],
                max: [v[3], v[4], v[5]],
            });
        }
        let (pos, greater) = match (s.find('>'), s.find('<')) {
            (Some(p), None) => (p, true),
            (None, Some(p)) => (p, false),
            _ => return Err(GirError::invalid(format!("unrecognized selection `{s}`"))),
        };
        let attr = match s[..pos].trim() {
            "roughness" => MaterialAttr::Roughness,
            "metallic" => MaterialAttr::Metallic,
            "opacity" => MaterialAttr::Opacity,
            a => return Err(GirError::invalid(format!("unknown attribute `{a}`"))),
        };
        let value = s[pos + 1..]
            .trim()
            .parse::<f64>()
            .map_err(|_| GirError::invalid(format!("bad threshold in `{s}`")))?;
        Ok(Selection::Attribute { attr, greater, value })
    }
}

impl Selection {
    pub fn contains(&self, g: &GaussianParams) -> bool {
        match self {
            Selection::All => true,
            Selection::Box { min, max } => (0..3).all(|k| g.position[k] >= min[k] && g.position[k] <= max[k]),
            Selection::Attribute { attr, greater, value } => {
                let v = match attr {
                    MaterialAttr::Roughness => g.roughness,
                    MaterialAttr::Metallic => g.metallic,
                    MaterialAttr::Opacity => g.opacity(),
                };
                if *greater {
                    v > *value
                } else {
                    v < *value
                }
            }
        }
    }
}

/// Applies `overrides` to the selected Gaussians, clamping materials.
/// Returns how many were edited.
pub fn edit_materials(scene: &mut GaussianScene, selection: &Selection, overrides: &MaterialOverrides) -> Result<usize> {
    overrides.validate()?;
    let mut n = 0;
    for g in scene.gaussians.iter_mut().filter(|g| selection.contains(g)) {
        overrides.apply(g);
        g.project_to_valid();
        n += 1;
    }
    Ok(n)
}

/// One render: camera, output buffer and material edit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderRequest {
    pub camera: Camera,
    pub mode: RenderMode,
    pub overrides: MaterialOverrides,
}

/// Read-only rendering state of one scene: occupancy grid, cached diffuse
/// visibility and the DFG table. Lighting is supplied per render.
pub struct RenderSession {
    scene: Arc<GaussianScene>,
    dfg: Arc<DfgLut>,
    grid: Option<Arc<OccupancyGrid>>,
    visibility: Option<Arc<Vec<f64>>>,
    settings: PrefilterSettings,
    tonemap: ToneMapParams,
    diffuse_rays: usize,
}

impl RenderSession {
    /// Occlusion is enabled when `grid_res > 0`.
    pub fn new(scene: GaussianScene, dfg: Arc<DfgLut>, grid_res: usize, settings: PrefilterSettings, tonemap: ToneMapParams, diffuse_rays: usize) -> Result<Self> {
        if scene.is_empty() {
            return Err(GirError::EmptyScene);
        }
        let grid = if grid_res > 0 {
            match indirect::voxelize(&scene, grid_res) {
                Ok(g) => Some(Arc::new(g)),
                Err(GirError::NoOccupiers) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let visibility = match &grid {
            Some(grid) => {
                use rayon::prelude::*;
                let v: Result<Vec<f64>> = scene
                    .gaussians
                    .par_iter()
                    .map(|g| {
                        let n = unravel_normal(g)?;
                        Ok(indirect::diffuse_visibility(grid, &g.position, &n, diffuse_rays, None, 3.0 * g.max_scale(), 0).unwrap_or(1.0))
                    })
                    .collect();
                Some(Arc::new(v?))
            }
            None => None,
        };
        Ok(Self {
            scene: Arc::new(scene),
            dfg,
            grid,
            visibility,
            settings,
            tonemap,
            diffuse_rays,
        })
    }

    /// Session with the lighting pipeline settings the checkpoint was
    /// trained with.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let c = &ck.config;
        let dfg = Arc::new(build_dfg_lut(c.dfg_res)?);
        let grid_res = if c.grid_rebuild > 0 { c.grid_res } else { 0 };
        Self::new(ck.scene.clone(), dfg, grid_res, c.prefilter, c.tonemap, c.diffuse_rays)
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn settings(&self) -> &PrefilterSettings {
        &self.settings
    }

    /// Prefilters `env` for rendering.
    pub fn prepare_lighting(&self, env: &EnvironmentMap) -> Result<Arc<Lighting>> {
        Ok(Arc::new(Prefilter::new(env.width(), env.height(), self.settings)?.apply(env)?))
    }

    fn context(&self, lighting: Arc<Lighting>) -> ShadingContext {
        let mut ctx = ShadingContext::new(lighting, self.dfg.clone());
        if let Some(g) = &self.grid {
            ctx = ctx.with_grid(g.clone());
            ctx.visibility_cache = self.visibility.clone();
        }
        ctx.diffuse_rays = self.diffuse_rays;
        ctx.tonemap = self.tonemap;
        ctx
    }

    pub fn render_buffers(&self, lighting: &Arc<Lighting>, req: &RenderRequest) -> Result<FrameBuffers> {
        req.camera.validate()?;
        req.overrides.validate()?;
        let ctx = self.context(lighting.clone());
        let opts = RenderOptions {
            mode: req.mode,
            background: Rgb::zeros(),
            masking: true,
        };
        if req.overrides.is_identity() {
            render(&self.scene, &req.camera, &ctx, &opts)
        } else {
            render(&req.overrides.applied(&self.scene), &req.camera, &ctx, &opts)
        }
    }

    /// The displayed image of a render: color for shaded output, the
    /// attribute buffer otherwise.
    pub fn render_image(&self, lighting: &Arc<Lighting>, req: &RenderRequest) -> Result<Image> {
        let fb = self.render_buffers(lighting, req)?;
        display_image(&fb, req.mode)
    }

    pub fn render_png(&self, lighting: &Arc<Lighting>, req: &RenderRequest) -> Result<Vec<u8>> {
        encode_png(&self.render_image(lighting, req)?)
    }
}

/// Display form of the buffer selected by `mode`. Normals map to
/// `(n + 1) / 2` and depth is normalized by its maximum.
pub fn display_image(fb: &FrameBuffers, mode: RenderMode) -> Result<Image> {
    let (w, h) = (fb.width, fb.height);
    let gray = |v: &[f64]| v.iter().map(|x| Rgb::repeat(*x)).collect::<Vec<_>>();
    let px = match mode {
        RenderMode::Shaded => fb.color.clone(),
        RenderMode::Albedo => fb.albedo.clone(),
        RenderMode::Normal => fb.normal.iter().map(|n| (n + Rgb::repeat(1.0)) * 0.5).collect(),
        RenderMode::Roughness => gray(&fb.roughness),
        RenderMode::Metallic => gray(&fb.metallic),
        RenderMode::Depth => {
            let m = fb.depth.iter().copied().fold(0.0, f64::max).max(1e-12);
            gray(&fb.depth.iter().map(|d| d / m).collect::<Vec<_>>())
        }
    };
    Image::new(w, h, px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{orbit_cameras, sphere_scene};

    fn session() -> RenderSession {
        let dfg = Arc::new(build_dfg_lut(16).unwrap());
        RenderSession::new(sphere_scene(60, 1.0, 1), dfg, 16, PrefilterSettings::training(), ToneMapParams::default(), 16).unwrap()
    }

    #[test]
    fn override_then_inverse_restores_the_render() {
        let s = session();
        let light = s.prepare_lighting(&crate::synthetic::sky_env(16)).unwrap();
        let cam = orbit_cameras(1, 4.0, 24, 24, 0.7, 0.0).unwrap()[0];
        let o = MaterialOverrides {
            d_roughness: 0.13,
            d_metallic: -0.02,
            albedo_tint: [0.9, 1.1, 0.8],
        };
        let mut edited = s.scene().clone();
        for g in &mut edited.gaussians {
            o.apply(g);
            o.inverse().apply(g);
        }
        for (a, b) in edited.gaussians.iter().zip(&s.scene().gaussians) {
            assert!((a.roughness - b.roughness).abs() < 1e-12 && (a.albedo - b.albedo).abs().max() < 1e-12);
        }
        let req = RenderRequest {
            camera: cam,
            mode: RenderMode::Shaded,
            overrides: MaterialOverrides::default(),
        };
        let base = s.render_png(&light, &req).unwrap();
        let s2 = RenderSession::new(edited, s.dfg.clone(), 16, PrefilterSettings::training(), ToneMapParams::default(), 16).unwrap();
        assert_eq!(s2.render_png(&light, &req).unwrap(), base);
        let tinted = s.render_png(&light, &RenderRequest { overrides: o, ..req }).unwrap();
        assert_ne!(tinted, base);
    }

    #[test]
    fn selections_parse_and_filter() {
        let mut scene = sphere_scene(100, 1.0, 2);
        let sel: Selection = "metallic>0.5".parse().unwrap();
        let expected = scene.gaussians.iter().filter(|g| g.metallic > 0.5).count();
        assert!(expected > 0 && expected < 100);
        let o = MaterialOverrides {
            d_roughness: -1.0,
            ..Default::default()
        };
        assert_eq!(edit_materials(&mut scene, &sel, &o).unwrap(), expected);
        assert!(scene.gaussians.iter().all(|g| (g.metallic > 0.5) == (g.roughness == 0.0)));
        assert_eq!("box:-1,-1,0,1,1,1".parse::<Selection>().unwrap(), Selection::Box { min: [-1.0, -1.0, 0.0], max: [1.0; 3] });
        assert_eq!("all".parse::<Selection>().unwrap(), Selection::All);
        for bad in ["box:1,2", "shininess>1", "roughness=1", "metallic>x"] {
            assert!(bad.parse::<Selection>().is_err(), "{bad}");
        }
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let o = MaterialOverrides {
            albedo_tint: [0.0, 1.0, 1.0],
            ..Default::default()
        };
        assert!(o.validate().is_err());
        assert!(MaterialOverrides {
            d_roughness: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

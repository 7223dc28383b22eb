//! The training loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envlight::{light_regularizer, light_regularizer_grad, DfgLut, EnvGenerator, GeneratorConfig, LightingOperator, Prefilter, PrefilterSettings};
use crate::error::{GirError, Result};
use crate::frame::Image;
use crate::indirect::{self, OccupancyGrid};
use crate::math::{self, Rgb, ToneMapParams, Vec3};
use crate::raster::{render_backward, render_with_tape, Camera, FrameBuffers, RenderMode, RenderOptions};
use crate::scene::{GaussianScene, ParamGroup, PARAM_COUNT};
use crate::shading::ShadingContext;

use super::adam::{AdamConfig, AdamState, RowAdam};
use super::densify::{densify_and_prune, DensifyConfig, DensifyStats};
use super::loss::{image_losses, LossReport, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Position rate at the first and last iteration, in units of the
    /// camera extent; decays exponentially in between.
    pub position_init: f64,
    pub position_final: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub albedo: f64,
    pub roughness: f64,
    pub metallic: f64,
    pub indirect_sh: f64,
    pub generator: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            albedo: 1e-2,
            roughness: 1e-2,
            metallic: 1e-2,
            indirect_sh: 2.5e-3,
            generator: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// First iteration with directional masking; `None` never enables it.
    pub mask_activation: Option<usize>,
    /// Iterations between occupancy grid rebuilds; 0 disables occlusion.
    pub grid_rebuild: usize,
    pub grid_res: usize,
    pub diffuse_rays: usize,
    pub densify: DensifyConfig,
    pub generator: GeneratorConfig,
    pub prefilter: PrefilterSettings,
    pub dfg_res: usize,
    pub tonemap: ToneMapParams,
    /// Random per-iteration background; otherwise black.
    pub random_background: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            mask_activation: Some(500),
            grid_rebuild: 500,
            grid_res: indirect::DEFAULT_GRID_RES,
            diffuse_rays: indirect::DEFAULT_DIFFUSE_RAYS,
            densify: DensifyConfig {
                until: 2500,
                ..DensifyConfig::default()
            },
            generator: GeneratorConfig::default(),
            prefilter: PrefilterSettings::training(),
            dfg_res: 64,
            tonemap: ToneMapParams::default(),
            random_background: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let all = [w.ssim, w.smooth_normal, w.smooth_albedo, w.smooth_roughness, w.smooth_metallic, w.light];
        if all.iter().any(|v| !(*v >= 0.0)) || w.ssim > 1.0 {
            return Err(GirError::invalid("loss weights must be >= 0 and ssim weight <= 1"));
        }
        if let Some(a) = self.mask_activation {
            if a > self.iterations {
                return Err(GirError::invalid("mask activation after the last iteration"));
            }
        }
        Ok(())
    }

    fn row_lr(&self, position: f64) -> [f64; PARAM_COUNT] {
        let mut lr = [0.0; PARAM_COUNT];
        for g in ParamGroup::ALL {
            let v = match g {
                ParamGroup::Position => position,
                ParamGroup::Scale => self.lr.scale,
                ParamGroup::Rotation => self.lr.rotation,
                ParamGroup::Opacity => self.lr.opacity,
                ParamGroup::Albedo => self.lr.albedo,
                ParamGroup::Roughness => self.lr.roughness,
                ParamGroup::Metallic => self.lr.metallic,
                ParamGroup::IndirectSh => self.lr.indirect_sh,
            };
            for i in g.range() {
                lr[i] = v;
            }
        }
        lr
    }
}

/// One posed training image. `alpha`, when present, composites the image over
/// the per-iteration background.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
    pub alpha: Option<Vec<f64>>,
}

impl TrainView {
    pub fn target(&self, background: &Rgb) -> Image {
        match &self.alpha {
            None => self.image.clone(),
            Some(a) => Image {
                width: self.image.width,
                height: self.image.height,
                pixels: self
                    .image
                    .pixels
                    .iter()
                    .zip(a)
                    .map(|(c, a)| c * *a + background * (1.0 - a))
                    .collect(),
            },
        }
    }
}

/// Frozen occlusion state shared by consecutive steps.
#[derive(Debug, Clone, Default)]
pub struct OcclusionState {
    pub grid: Option<Arc<OccupancyGrid>>,
    pub visibility: Option<Arc<Vec<f64>>>,
}

/// Everything one loss evaluation reads.
pub struct StepInputs<'a> {
    pub scene: &'a GaussianScene,
    pub generator: &'a EnvGenerator,
    pub operator: &'a LightingOperator,
    pub dfg: &'a Arc<DfgLut>,
    pub occlusion: &'a OcclusionState,
    pub camera: &'a Camera,
    pub target: &'a Image,
    pub background: Rgb,
    pub masking: bool,
    pub weights: &'a LossWeights,
    pub tonemap: ToneMapParams,
    pub diffuse_rays: usize,
}

/// Gradients of the total loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub gaussians: Vec<[f64; PARAM_COUNT]>,
    pub generator: Vec<f64>,
    /// Pixel-space screen mean gradients, for densification.
    pub mean2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Gradients {
    /// Fails on the first non-finite entry, naming its parameter group.
    pub fn check_finite(&self) -> Result<()> {
        for row in &self.gaussians {
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(GirError::NanGradient {
                    group: ParamGroup::of_index(i).name(),
                });
            }
        }
        if self.generator.iter().any(|v| !v.is_finite()) {
            return Err(GirError::NanGradient { group: "generator" });
        }
        Ok(())
    }
}

/// Shading context of one step.
pub fn step_context(inputs: &StepInputs, lighting: crate::envlight::Lighting) -> ShadingContext {
    let mut ctx = ShadingContext::new(Arc::new(lighting), inputs.dfg.clone());
    ctx.tonemap = inputs.tonemap;
    ctx.diffuse_rays = inputs.diffuse_rays;
    if let Some(grid) = &inputs.occlusion.grid {
        ctx = ctx.with_grid(grid.clone());
        ctx.visibility_cache = inputs.occlusion.visibility.clone();
    }
    ctx
}

/// Loss of one view and its gradient w.r.t. every Gaussian parameter and the
/// generator weights. Mask bits and occlusion flags are held constant.
pub fn loss_and_grad(inputs: &StepInputs) -> Result<(LossReport, Gradients, FrameBuffers)> {
    let (env, tape) = inputs.generator.forward_with_tape();
    let lighting = inputs.operator.apply(&env)?;
    let ctx = step_context(inputs, lighting);
    let opts = RenderOptions {
        mode: RenderMode::Shaded,
        background: inputs.background,
        masking: inputs.masking,
    };
    let (fb, rtape) = render_with_tape(inputs.scene, inputs.camera, &ctx, &opts)?;
    let (mut rep, pixel_grads) = image_losses(&fb, inputs.target, inputs.weights)?;
    let rg = render_backward(inputs.scene, &ctx, &rtape, &pixel_grads)?;
    let mut d_env = inputs.operator.backward(&rg.lighting);
    rep.light = light_regularizer(&env);
    if inputs.weights.light != 0.0 {
        for (d, g) in d_env.iter_mut().zip(light_regularizer_grad(&env)) {
            *d += g * inputs.weights.light;
        }
    }
    rep.total = rep.weighted_total(inputs.weights);
    let generator = inputs.generator.backward(&tape, &d_env);
    Ok((
        rep,
        Gradients {
            gaussians: rg.gaussians,
            generator,
            mean2d: rg.mean2d,
            visible: rg.visible,
        },
        fb,
    ))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub view: usize,
    pub gaussians: usize,
    pub loss: LossReport,
}

/// Radius of the camera centers around their mean, padded by 10%.
pub fn camera_extent(views: &[TrainView]) -> f64 {
    let n = views.len().max(1) as f64;
    let center = views.iter().fold(Vec3::zeros(), |a, v| a + v.camera.position) / n;
    let r = views.iter().map(|v| (v.camera.position - center).norm()).fold(0.0, f64::max);
    1.1 * r.max(1e-6)
}

/// Point closest, in the least-squares sense, to every camera's optical
/// axis; the origin when the axes are (nearly) parallel.
pub fn look_center(cameras: &[Camera]) -> Vec3 {
    let mut a = crate::math::Mat3::zeros();
    let mut b = Vec3::zeros();
    for c in cameras {
        let d = c.rotation.column(2).into_owned();
        let p = crate::math::Mat3::identity() - d * d.transpose();
        a += p;
        b += p * c.position;
    }
    match a.try_inverse() {
        Some(inv) if a.determinant().abs() > 1e-9 => inv * b,
        _ => Vec3::zeros(),
    }
}

/// Random starting scene for captures without a point cloud: `count`
/// Gaussians uniformly in a ball around [`look_center`] sized to the
/// cameras' field of view, neutral materials, opacity 0.1.
pub fn random_init(cameras: &[Camera], count: usize, seed: u64) -> Result<GaussianScene> {
    if cameras.is_empty() || count == 0 {
        return Err(GirError::invalid("random initialization needs cameras and a positive count"));
    }
    let center = look_center(cameras);
    let dist = cameras.iter().map(|c| (c.position - center).norm()).sum::<f64>() / cameras.len() as f64;
    let half_fov = 0.5 * cameras[0].camera_angle_x();
    let radius = dist * half_fov.tan();
    let mut rng = ChaCha8Rng::seed_from_u64(math::splitmix64(seed ^ 0x1D17));
    let mut scene = GaussianScene::new(seed);
    let spacing = radius / (count as f64).cbrt();
    for _ in 0..count {
        let p = loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm_squared() <= 1.0 {
                break v;
            }
        };
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let q = math::quat_from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
        let mut g = crate::scene::GaussianParams::new(center + p * radius, Vec3::new(spacing, spacing, 0.3 * spacing), q);
        g.opacity_logit = math::logit(0.1);
        g.albedo = Rgb::repeat(0.5);
        g.roughness = 0.5;
        g.metallic = 0.0;
        scene.push(g);
    }
    Ok(scene)
}

/// Optimizer state for a scene, a generator and its training views.
pub struct Trainer {
    pub scene: GaussianScene,
    pub generator: EnvGenerator,
    pub config: TrainConfig,
    pub views: Vec<TrainView>,
    pub iteration: usize,
    pub log: Vec<LogRecord>,
    operator: LightingOperator,
    dfg: Arc<DfgLut>,
    occlusion: OcclusionState,
    adam_rows: RowAdam<PARAM_COUNT>,
    adam_gen: AdamState,
    stats: DensifyStats,
    extent: f64,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(scene: GaussianScene, views: Vec<TrainView>, config: TrainConfig) -> Result<Self> {
        let generator = EnvGenerator::new(config.generator.clone())?;
        let dfg = Arc::new(crate::envlight::build_dfg_lut(config.dfg_res)?);
        Self::with_parts(scene, generator, dfg, views, config)
    }

    /// Like [`Trainer::new`] with an existing generator and DFG table.
    pub fn with_parts(scene: GaussianScene, generator: EnvGenerator, dfg: Arc<DfgLut>, views: Vec<TrainView>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if views.len() < 2 {
            return Err(GirError::invalid("training needs at least 2 posed images"));
        }
        if scene.is_empty() {
            return Err(GirError::EmptyScene);
        }
        for v in &views {
            if (v.image.width, v.image.height) != (v.camera.width, v.camera.height) {
                return Err(GirError::DimensionMismatch("image and camera sizes differ".into()));
            }
        }
        let gc = generator.config();
        let operator = Prefilter::new(gc.output_width(), gc.output_height(), config.prefilter)?.operator();
        let n = scene.len();
        let extent = camera_extent(&views);
        Ok(Self {
            adam_gen: AdamState::zeros(generator.params().len()),
            rng: ChaCha8Rng::seed_from_u64(math::splitmix64(config.seed ^ 0x7A1_4E55)),
            scene,
            generator,
            config,
            views,
            iteration: 0,
            log: Vec::new(),
            operator,
            dfg,
            occlusion: OcclusionState::default(),
            adam_rows: RowAdam::zeros(n),
            stats: DensifyStats::new(n),
            extent,
        })
    }

    pub fn dfg(&self) -> &Arc<DfgLut> {
        &self.dfg
    }

    pub fn occlusion(&self) -> &OcclusionState {
        &self.occlusion
    }

    pub fn operator(&self) -> &LightingOperator {
        &self.operator
    }

    pub fn masking_active(&self) -> bool {
        self.config.mask_activation.is_some_and(|a| self.iteration >= a)
    }

    fn position_lr(&self) -> f64 {
        let t = if self.config.iterations > 1 {
            (self.iteration as f64 / (self.config.iterations - 1) as f64).min(1.0)
        } else {
            0.0
        };
        let (a, b) = (self.config.lr.position_init.ln(), self.config.lr.position_final.ln());
        (a + (b - a) * t).exp() * self.extent
    }

    /// Rebuilds the occupancy grid and the per-Gaussian visibility cache.
    pub fn rebuild_occlusion(&mut self) -> Result<()> {
        match indirect::voxelize(&self.scene, self.config.grid_res) {
            Ok(grid) => {
                self.occlusion.grid = Some(Arc::new(grid));
                self.refresh_visibility()?;
            }
            Err(GirError::NoOccupiers) => {
                log::warn!("iteration {}: no opaque Gaussians, occlusion disabled", self.iteration);
                self.occlusion = OcclusionState::default();
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn refresh_visibility(&mut self) -> Result<()> {
        if self.occlusion.grid.is_none() {
            return Ok(());
        }
        let env = self.generator.generate();
        let lighting = self.operator.apply(&env)?;
        let mut ctx = ShadingContext::new(Arc::new(lighting), self.dfg.clone()).with_grid(self.occlusion.grid.clone().unwrap());
        ctx.diffuse_rays = self.config.diffuse_rays;
        self.occlusion.visibility = Some(Arc::new(ctx.compute_visibility_cache(&self.scene)?));
        Ok(())
    }

    /// Runs one optimization step and returns its loss report.
    pub fn step(&mut self) -> Result<LossReport> {
        let it = self.iteration;
        let cfg = &self.config;
        if cfg.grid_rebuild > 0 && it > 0 && it % cfg.grid_rebuild == 0 {
            self.rebuild_occlusion()?;
        }
        let cfg = &self.config;
        let view = self.rng.random_range(0..self.views.len());
        let background = if cfg.random_background {
            Rgb::new(self.rng.random(), self.rng.random(), self.rng.random())
        } else {
            Rgb::zeros()
        };
        let v = &self.views[view];
        let target = v.target(&background);
        let inputs = StepInputs {
            scene: &self.scene,
            generator: &self.generator,
            operator: &self.operator,
            dfg: &self.dfg,
            occlusion: &self.occlusion,
            camera: &v.camera,
            target: &target,
            background,
            masking: self.masking_active(),
            weights: &cfg.weights,
            tonemap: cfg.tonemap,
            diffuse_rays: cfg.diffuse_rays,
        };
        let (rep, grads, _) = loss_and_grad(&inputs)?;
        if !rep.total.is_finite() {
            return Err(GirError::NonFiniteLoss { iteration: it });
        }
        grads.check_finite()?;
        let (w, h) = (v.camera.width, v.camera.height);

        let lr = self.config.row_lr(self.position_lr());
        let mut rows: Vec<[f64; PARAM_COUNT]> = self.scene.gaussians.iter().map(|g| g.to_flat()).collect();
        self.adam_rows.update(&self.config.adam, &mut rows, &grads.gaussians, &lr);
        for (g, r) in self.scene.gaussians.iter_mut().zip(&rows) {
            g.set_flat(r);
            g.project_to_valid();
        }
        let glr = self.config.lr.generator;
        self.adam_gen
            .update(&self.config.adam, self.generator.params_mut(), &grads.generator, |_| glr);

        for (i, vis) in grads.visible.iter().enumerate() {
            if *vis {
                self.stats.record(i, grads.mean2d[i], w, h);
            }
        }
        let d = self.config.densify;
        let next = it + 1;
        if d.interval > 0 && next >= d.start && next <= d.until && next % d.interval == 0 {
            let out = densify_and_prune(&mut self.scene, &self.stats, &d, self.extent, next as u64)?;
            if self.scene.is_empty() {
                return Err(GirError::EmptyScene);
            }
            self.adam_rows.remap(&out.sources);
            self.stats = DensifyStats::new(self.scene.len());
            if out.cloned + out.split + out.pruned > 0 {
                log::debug!(
                    "iteration {next}: cloned {} split {} pruned {} -> {} Gaussians",
                    out.cloned,
                    out.split,
                    out.pruned,
                    self.scene.len()
                );
                self.refresh_visibility()?;
            }
        }

        self.log.push(LogRecord {
            iteration: it,
            view,
            gaussians: self.scene.len(),
            loss: rep,
        });
        self.iteration = next;
        Ok(rep)
    }

    /// Steps until `iteration` reaches `until` (capped at the configured
    /// iteration count).
    pub fn run_until(&mut self, until: usize) -> Result<()> {
        while self.iteration < until.min(self.config.iterations) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.iterations)
    }
}

/// Result of a full training run.
pub struct TrainOutput {
    pub scene: GaussianScene,
    pub generator: EnvGenerator,
    pub log: Vec<LogRecord>,
}

/// Trains `scene` and a fresh generator on `views` for `config.iterations`.
pub fn train(scene: GaussianScene, views: Vec<TrainView>, config: TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(scene, views, config)?;
    t.run()?;
    Ok(TrainOutput {
        scene: t.scene,
        generator: t.generator,
        log: t.log,
    })
}

/// Order-sensitive checksum of every trainable value (bit patterns).
pub fn parameter_checksum(scene: &GaussianScene, generator: &EnvGenerator) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut feed = |v: f64| {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for g in &scene.gaussians {
        g.to_flat().iter().for_each(|v| feed(*v));
    }
    generator.params().iter().for_each(|v| feed(*v));
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{context_for, orbit_cameras, render_views, sky_env, sphere_scene};
    use proptest::prelude::*;

    fn small_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            mask_activation: Some(iterations / 2),
            grid_rebuild: 4,
            grid_res: 16,
            diffuse_rays: 8,
            dfg_res: 16,
            generator: GeneratorConfig {
                channels: 2,
                height: 4,
                width: 8,
                stage_widths: vec![2, 2],
                ..GeneratorConfig::default()
            },
            densify: DensifyConfig {
                start: 2,
                interval: 3,
                until: iterations,
                ..DensifyConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn views() -> Vec<TrainView> {
        let truth = sphere_scene(120, 1.0, 1);
        let dfg = Arc::new(crate::envlight::build_dfg_lut(16).unwrap());
        let ctx = context_for(&truth, &sky_env(16), PrefilterSettings::training(), dfg, 16).unwrap();
        render_views(&truth, &ctx, &orbit_cameras(3, 4.0, 16, 16, 0.7, 0.0).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn look_center_recovers_target(x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64) {
            let target = Vec3::new(x, y, z);
            let cams: Vec<Camera> = orbit_cameras(5, 4.0, 8, 8, 0.7, 0.3)
                .unwrap()
                .iter()
                .map(|c| Camera::look_at(c.position + target, target, Vec3::z(), 8, 8, 0.7).unwrap())
                .collect();
            prop_assert!((look_center(&cams) - target).norm() < 1e-9);
        }
    }

    #[test]
    fn random_init_fills_the_view_ball() {
        let cams = orbit_cameras(6, 4.0, 8, 8, 0.7, 0.0).unwrap();
        let scene = random_init(&cams, 500, 3).unwrap();
        assert_eq!(scene.len(), 500);
        let radius = 4.0 * 0.35f64.tan();
        assert!(scene.gaussians.iter().all(|g| g.position.norm() <= radius + 1e-9));
        assert!(scene.gaussians.iter().any(|g| g.position.norm() > 0.8 * radius));
        assert_eq!(random_init(&cams, 500, 3).unwrap(), scene);
        assert!(random_init(&cams, 0, 3).is_err());
        assert!(random_init(&[], 10, 3).is_err());
    }

    #[test]
    fn validate_rejects_bad_settings() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.weights.ssim = 1.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.weights.light = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.mask_activation = Some(c.iterations + 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_and_logs_every_step() {
        let run = || {
            let mut t = Trainer::new(random_init(&views().iter().map(|v| v.camera).collect::<Vec<_>>(), 150, 2).unwrap(), views(), small_config(10)).unwrap();
            t.run().unwrap();
            (parameter_checksum(&t.scene, &t.generator), t.log)
        };
        let (a, log) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(log.len(), 10);
        assert_eq!(log.iter().map(|r| r.iteration).collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert!(log.iter().all(|r| r.loss.total.is_finite()));
    }

    #[test]
    fn masking_switches_on_at_activation() {
        let views = views();
        let mut t = Trainer::new(sphere_scene(100, 1.0, 0), views, small_config(6)).unwrap();
        assert!(!t.masking_active());
        t.run_until(3).unwrap();
        assert!(t.masking_active());
    }
}

//! Scene data model: PBR Gaussians, covariance construction, normal
//! unraveling along the shortest ellipsoid axis and directional masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GirError, Result};
use crate::math::{self, Mat3, Quat, Rgb, ShCoeffs, Vec3};

/// Number of trainable scalars per Gaussian in the flat layout.
pub const PARAM_COUNT: usize = 64;

/// Offsets into the flat trainable layout of one Gaussian.
pub mod layout {
    pub const POSITION: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const ALBEDO: usize = 11;
    pub const ROUGHNESS: usize = 14;
    pub const METALLIC: usize = 15;
    pub const SH: usize = 16;
}

/// Parameter groups used for learning rates and gradient diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Opacity,
    Albedo,
    Roughness,
    Metallic,
    IndirectSh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Albedo,
        ParamGroup::Roughness,
        ParamGroup::Metallic,
        ParamGroup::IndirectSh,
    ];

    pub fn of_index(i: usize) -> ParamGroup {
        use layout::*;
        match i {
            _ if i < LOG_SCALE => ParamGroup::Position,
            _ if i < ROTATION => ParamGroup::Scale,
            _ if i < OPACITY => ParamGroup::Rotation,
            _ if i < ALBEDO => ParamGroup::Opacity,
            _ if i < ROUGHNESS => ParamGroup::Albedo,
            _ if i < METALLIC => ParamGroup::Roughness,
            _ if i < SH => ParamGroup::Metallic,
            _ => ParamGroup::IndirectSh,
        }
    }

    pub fn range(self) -> std::ops::Range<usize> {
        use layout::*;
        match self {
            ParamGroup::Position => POSITION..LOG_SCALE,
            ParamGroup::Scale => LOG_SCALE..ROTATION,
            ParamGroup::Rotation => ROTATION..OPACITY,
            ParamGroup::Opacity => OPACITY..ALBEDO,
            ParamGroup::Albedo => ALBEDO..ROUGHNESS,
            ParamGroup::Roughness => ROUGHNESS..METALLIC,
            ParamGroup::Metallic => METALLIC..SH,
            ParamGroup::IndirectSh => SH..PARAM_COUNT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Scale => "scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Albedo => "albedo",
            ParamGroup::Roughness => "roughness",
            ParamGroup::Metallic => "metallic",
            ParamGroup::IndirectSh => "indirect_sh",
        }
    }
}

/// One Gaussian: geometry, opacity and PBR material.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub position: Vec3,
    /// Per-axis log standard deviation.
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    pub indirect_sh: ShCoeffs,
    /// Color shown in place of the shaded color when the Gaussian faces away
    /// from the camera. Fixed at creation, never trained.
    pub back_color: Rgb,
}

impl GaussianParams {
    pub fn new(position: Vec3, scale: Vec3, rotation: Quat) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation,
            opacity_logit: math::logit(0.9),
            albedo: Rgb::repeat(0.5),
            roughness: 0.8,
            metallic: 0.0,
            indirect_sh: ShCoeffs::default(),
            back_color: Rgb::repeat(0.5),
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale().max()
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Result<Mat3> {
        math::quat_to_rotmat(&self.rotation)
    }

    pub fn to_flat(&self) -> [f64; PARAM_COUNT] {
        use layout::*;
        let mut p = [0.0; PARAM_COUNT];
        p[POSITION..POSITION + 3].copy_from_slice(self.position.as_slice());
        p[LOG_SCALE..LOG_SCALE + 3].copy_from_slice(self.log_scale.as_slice());
        p[ROTATION..ROTATION + 4].copy_from_slice(&self.rotation);
        p[OPACITY] = self.opacity_logit;
        p[ALBEDO..ALBEDO + 3].copy_from_slice(self.albedo.as_slice());
        p[ROUGHNESS] = self.roughness;
        p[METALLIC] = self.metallic;
        for (k, c) in self.indirect_sh.coeffs.iter().enumerate() {
            p[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
        }
        p
    }

    pub fn set_flat(&mut self, p: &[f64; PARAM_COUNT]) {
        use layout::*;
        self.position = Vec3::from_column_slice(&p[POSITION..POSITION + 3]);
        self.log_scale = Vec3::from_column_slice(&p[LOG_SCALE..LOG_SCALE + 3]);
        self.rotation.copy_from_slice(&p[ROTATION..ROTATION + 4]);
        self.opacity_logit = p[OPACITY];
        self.albedo = Rgb::from_column_slice(&p[ALBEDO..ALBEDO + 3]);
        self.roughness = p[ROUGHNESS];
        self.metallic = p[METALLIC];
        for (k, c) in self.indirect_sh.coeffs.iter_mut().enumerate() {
            c.copy_from_slice(&p[SH + 3 * k..SH + 3 * k + 3]);
        }
    }

    /// Projects trainable values back onto their valid ranges: material
    /// clamped to [0,1], quaternion renormalized.
    pub fn project_to_valid(&mut self) {
        self.albedo = self.albedo.map(|a| a.clamp(0.0, 1.0));
        self.roughness = self.roughness.clamp(0.0, 1.0);
        self.metallic = self.metallic.clamp(0.0, 1.0);
        if let Ok(q) = math::normalize_quat(&self.rotation) {
            self.rotation = q;
        } else {
            self.rotation = math::IDENTITY_QUAT;
        }
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance(g: &GaussianParams) -> Result<Mat3> {
    let r = g.rotation_matrix()?;
    let m = r * Mat3::from_diagonal(&g.scale());
    Ok(m * m.transpose())
}

/// Index of the shortest axis; ties resolve to the lowest index.
pub fn shortest_axis(log_scale: &Vec3) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if log_scale[k] < log_scale[best] {
            best = k;
        }
    }
    best
}

/// Surface normal of a Gaussian: the rotation column of its shortest axis.
pub fn unravel_normal(g: &GaussianParams) -> Result<Vec3> {
    let r = g.rotation_matrix()?;
    Ok(r.column(shortest_axis(&g.log_scale)).into_owned())
}

/// Heaviside visibility of a Gaussian's normal as seen from `origin`.
/// Returns the mask bit and the (unflipped) normal.
pub fn directional_mask(normal: &Vec3, position: &Vec3, origin: &Vec3) -> (bool, Vec3) {
    let wo = (origin - position).normalize();
    (normal.dot(&wo) > 0.0, *normal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl BoundingSphere {
    /// Distance along `dir` from an interior point to the sphere boundary.
    pub fn exit_distance(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return 0.0;
        }
        (-b + disc.sqrt()).max(0.0)
    }
}

/// An ordered collection of Gaussians plus the seed stream used to draw
/// back-face colors for new members.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<GaussianParams>,
    pub seed: u64,
    /// Number of back-face colors drawn so far from the seed stream.
    pub draws: u64,
}

impl GaussianScene {
    pub fn new(seed: u64) -> Self {
        Self {
            gaussians: Vec::new(),
            seed,
            draws: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Next back-face color, uniform in [0.2, 0.8]^3.
    pub fn draw_back_color(&mut self) -> Rgb {
        let mut rng = ChaCha8Rng::seed_from_u64(math::splitmix64(self.seed ^ 0xB5C0_FBCF));
        rng.set_stream(self.draws);
        self.draws += 1;
        Rgb::new(
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
        )
    }

    /// Appends `g` with a freshly drawn back-face color.
    pub fn push(&mut self, mut g: GaussianParams) {
        g.back_color = self.draw_back_color();
        self.gaussians.push(g);
    }

    pub fn bounding_sphere(&self) -> Result<BoundingSphere> {
        scene_bounding_sphere(self)
    }
}

/// Sphere containing every mean plus a 3-sigma margin of its largest axis.
pub fn scene_bounding_sphere(scene: &GaussianScene) -> Result<BoundingSphere> {
    if scene.is_empty() {
        return Err(GirError::EmptyScene);
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for g in &scene.gaussians {
        lo = lo.inf(&g.position);
        hi = hi.sup(&g.position);
    }
    let center = 0.5 * (lo + hi);
    let radius = scene
        .gaussians
        .iter()
        .map(|g| (g.position - center).norm() + 3.0 * g.max_scale())
        .fold(0.0, f64::max);
    Ok(BoundingSphere { center, radius })
}

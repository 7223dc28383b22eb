//! Tile-based differentiable splatting.
//!
//! Gaussians are projected to screen-space splats, binned into 16x16 tiles in
//! ascending depth, and alpha-composited front to back. Every splat carries a
//! feature vector (display color, normal, albedo, roughness, metallic, depth)
//! so the attribute buffers share one blending loop with the color.

pub mod camera;
pub mod project;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envlight::LightingGrad;
use crate::error::{GirError, Result};
use crate::math::{self, Mat3, Rgb, Vec3};
use crate::scene::{layout, shortest_axis, unravel_normal, GaussianScene, PARAM_COUNT};
use crate::shading::{pull_back_to_gaussian, Occlusion, ShadeRecord, ShadingContext, Surface};

pub use camera::Camera;
pub use project::{project_backward, project_gaussian, Splat2D};

pub const TILE_SIZE: usize = 16;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Blending stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Per-splat feature layout.
const F_COLOR: usize = 0;
const F_NORMAL: usize = 3;
const F_ALBEDO: usize = 6;
const F_ROUGH: usize = 9;
const F_METAL: usize = 10;
const F_DEPTH: usize = 11;
const NF: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Shaded,
    Albedo,
    Normal,
    Roughness,
    Metallic,
    Depth,
}

impl std::str::FromStr for RenderMode {
    type Err = GirError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "shaded" => RenderMode::Shaded,
            "albedo" => RenderMode::Albedo,
            "normal" => RenderMode::Normal,
            "roughness" => RenderMode::Roughness,
            "metallic" => RenderMode::Metallic,
            "depth" => RenderMode::Depth,
            _ => return Err(GirError::InvalidArgument(format!("unknown render mode `{s}`"))),
        })
    }
}

impl RenderMode {
    pub const ALL: [RenderMode; 6] = [
        RenderMode::Shaded,
        RenderMode::Albedo,
        RenderMode::Normal,
        RenderMode::Roughness,
        RenderMode::Metallic,
        RenderMode::Depth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Shaded => "shaded",
            RenderMode::Albedo => "albedo",
            RenderMode::Normal => "normal",
            RenderMode::Roughness => "roughness",
            RenderMode::Metallic => "metallic",
            RenderMode::Depth => "depth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub background: Rgb,
    /// Directional masking: back-facing Gaussians show their back color.
    pub masking: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            mode: RenderMode::Shaded,
            background: Rgb::zeros(),
            masking: true,
        }
    }
}

/// Rendered buffers, row-major, `width * height` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: usize,
    pub height: usize,
    /// Display color of the selected mode, background composited.
    pub color: Vec<Rgb>,
    pub alpha: Vec<f64>,
    /// Alpha-weighted view depth.
    pub depth: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub albedo: Vec<Rgb>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
}

impl FrameBuffers {
    fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![Rgb::zeros(); n],
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
            normal: vec![Vec3::zeros(); n],
            albedo: vec![Rgb::zeros(); n],
            roughness: vec![0.0; n],
            metallic: vec![0.0; n],
        }
    }
}

/// Depth-ordered splat lists per screen tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Indices into the splat array, ascending depth, ties by Gaussian index.
    pub lists: Vec<Vec<u32>>,
}

/// Bins splats into tiles overlapped by their 3-sigma bounding boxes.
pub fn sort_and_bin(splats: &[Splat2D], width: usize, height: usize, tile_size: usize) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.pixels;
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    lists.par_iter_mut().for_each(|l| {
        l.sort_by(|&a, &b| {
            let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
            sa.depth.total_cmp(&sb.depth).then(sa.index.cmp(&sb.index))
        })
    });
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}

/// Opacity of a splat at pixel `(x, y)` with its Gaussian falloff, or `None`
/// when the pixel is outside the 3-sigma ellipse or below the alpha floor.
#[inline]
fn splat_alpha(s: &Splat2D, x: usize, y: usize) -> Option<(f64, f64, f64)> {
    let [x0, x1, y0, y1] = s.pixels;
    if x < x0 || x > x1 || y < y0 || y > y1 {
        return None;
    }
    let m2 = s.mahalanobis2(x as f64 + 0.5, y as f64 + 0.5);
    if m2 > project::CUTOFF_SIGMA * project::CUTOFF_SIGMA {
        return None;
    }
    let g = (-0.5 * m2).exp();
    let raw = s.opacity * g;
    let alpha = raw.min(MAX_ALPHA);
    if alpha < MIN_ALPHA {
        return None;
    }
    Some((alpha, g, raw))
}

/// Everything the backward pass needs from a forward render.
pub struct RenderTape {
    pub splats: Vec<Splat2D>,
    features: Vec<[f64; NF]>,
    records: Vec<Option<ShadeRecord>>,
    pub bins: TileBins,
    final_t: Vec<f64>,
    /// Number of list entries visited per pixel before termination.
    visited: Vec<u32>,
    options: RenderOptions,
    camera: Camera,
}

/// Shades and projects every Gaussian.
fn prepare(scene: &GaussianScene, cam: &Camera, ctx: &ShadingContext, opts: &RenderOptions) -> Result<(Vec<Splat2D>, Vec<[f64; NF]>, Vec<Option<ShadeRecord>>)> {
    let n = scene.len();
    let out: Vec<Option<(Splat2D, [f64; NF], Option<ShadeRecord>)>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| -> Result<_> {
            let Some(mut sp) = project_gaussian(g, i, cam)? else {
                return Ok(None);
            };
            let normal = unravel_normal(g)?;
            let wo = (cam.position - g.position).normalize();
            sp.mask = !opts.masking || normal.dot(&wo) > 0.0;
            let mut f = [0.0; NF];
            f[F_DEPTH] = sp.depth;
            let mut record = None;
            if sp.mask {
                f[F_NORMAL..F_NORMAL + 3].copy_from_slice(normal.as_slice());
                f[F_ALBEDO..F_ALBEDO + 3].copy_from_slice(g.albedo.as_slice());
                f[F_ROUGH] = g.roughness;
                f[F_METAL] = g.metallic;
            }
            let color = match opts.mode {
                RenderMode::Shaded => {
                    if sp.mask {
                        let refl = math::reflect_unchecked(&normal, &wo);
                        let occ = Occlusion {
                            occluded: ctx.reflection_occluded(g, &refl),
                            visibility: ctx.visibility_of(i, n, g, &normal),
                        };
                        let rec = ShadeRecord::forward(&Surface::of(g, normal, wo), &occ, &g.indirect_sh, &ctx.lighting, &ctx.dfg);
                        let c = math::tonemap(&rec.color, &ctx.tonemap);
                        record = Some(rec);
                        c
                    } else {
                        g.back_color
                    }
                }
                RenderMode::Albedo => Rgb::from_column_slice(&f[F_ALBEDO..F_ALBEDO + 3]),
                RenderMode::Normal if sp.mask => (normal + Vec3::repeat(1.0)) * 0.5,
                RenderMode::Normal => Rgb::zeros(),
                RenderMode::Roughness => Rgb::repeat(f[F_ROUGH]),
                RenderMode::Metallic => Rgb::repeat(f[F_METAL]),
                RenderMode::Depth => Rgb::repeat(sp.depth),
            };
            f[F_COLOR..F_COLOR + 3].copy_from_slice(color.as_slice());
            Ok(Some((sp, f, record)))
        })
        .collect::<Result<_>>()?;
    let mut splats = Vec::new();
    let mut feats = Vec::new();
    let mut recs = Vec::new();
    for (s, f, r) in out.into_iter().flatten() {
        splats.push(s);
        feats.push(f);
        recs.push(r);
    }
    Ok((splats, feats, recs))
}

/// One pixel's blend over an ordered candidate list.
#[inline]
fn blend_pixel(
    order: impl Iterator<Item = u32>,
    splats: &[Splat2D],
    features: &[[f64; NF]],
    x: usize,
    y: usize,
) -> ([f64; NF], f64, u32) {
    let mut acc = [0.0; NF];
    let mut t = 1.0;
    let mut visited = 0;
    for (pos, k) in order.enumerate() {
        let s = &splats[k as usize];
        let Some((alpha, _, _)) = splat_alpha(s, x, y) else {
            continue;
        };
        let w = alpha * t;
        let f = &features[k as usize];
        for c in 0..NF {
            acc[c] += w * f[c];
        }
        t *= 1.0 - alpha;
        visited = pos as u32 + 1;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (acc, t, visited)
}

fn write_pixel(fb: &mut FrameBuffers, p: usize, acc: &[f64; NF], t: f64, bg: &Rgb) {
    fb.color[p] = Rgb::new(acc[0], acc[1], acc[2]) + bg * t;
    fb.alpha[p] = 1.0 - t;
    fb.normal[p] = Vec3::new(acc[F_NORMAL], acc[F_NORMAL + 1], acc[F_NORMAL + 2]);
    fb.albedo[p] = Rgb::new(acc[F_ALBEDO], acc[F_ALBEDO + 1], acc[F_ALBEDO + 2]);
    fb.roughness[p] = acc[F_ROUGH];
    fb.metallic[p] = acc[F_METAL];
    fb.depth[p] = acc[F_DEPTH];
}

/// Renders `scene` and keeps the intermediate state for [`render_backward`].
pub fn render_with_tape(scene: &GaussianScene, cam: &Camera, ctx: &ShadingContext, opts: &RenderOptions) -> Result<(FrameBuffers, RenderTape)> {
    cam.validate()?;
    let (splats, features, records) = prepare(scene, cam, ctx, opts)?;
    let bins = sort_and_bin(&splats, cam.width, cam.height, TILE_SIZE);
    let (w, h) = (cam.width, cam.height);
    let ts = bins.tile_size;
    let tiles: Vec<Vec<(usize, [f64; NF], f64, u32)>> = bins
        .lists
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % bins.tiles_x, ti / bins.tiles_x);
            let mut out = Vec::with_capacity(ts * ts);
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let (acc, t, v) = blend_pixel(list.iter().copied(), &splats, &features, x, y);
                    out.push((y * w + x, acc, t, v));
                }
            }
            out
        })
        .collect();
    let mut fb = FrameBuffers::new(w, h);
    let mut final_t = vec![1.0; w * h];
    let mut visited = vec![0; w * h];
    for tile in tiles {
        for (p, acc, t, v) in tile {
            write_pixel(&mut fb, p, &acc, t, &opts.background);
            final_t[p] = t;
            visited[p] = v;
        }
    }
    let tape = RenderTape {
        splats,
        features,
        records,
        bins,
        final_t,
        visited,
        options: *opts,
        camera: *cam,
    };
    Ok((fb, tape))
}

pub fn render(scene: &GaussianScene, cam: &Camera, ctx: &ShadingContext, opts: &RenderOptions) -> Result<FrameBuffers> {
    Ok(render_with_tape(scene, cam, ctx, opts)?.0)
}

/// Reference renderer: every pixel blends the full globally sorted splat
/// list, without tiling. Used to validate the tiled path.
pub fn render_reference(scene: &GaussianScene, cam: &Camera, ctx: &ShadingContext, opts: &RenderOptions) -> Result<FrameBuffers> {
    cam.validate()?;
    let (splats, features, _) = prepare(scene, cam, ctx, opts)?;
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth.total_cmp(&sb.depth).then(sa.index.cmp(&sb.index))
    });
    let mut fb = FrameBuffers::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (acc, t, _) = blend_pixel(order.iter().copied(), &splats, &features, x, y);
            write_pixel(&mut fb, y * cam.width + x, &acc, t, &opts.background);
        }
    }
    Ok(fb)
}

/// Loss gradients w.r.t. the output buffers. Empty vectors mean zero.
#[derive(Debug, Clone, Default)]
pub struct PixelGrads {
    pub color: Vec<Rgb>,
    pub normal: Vec<Vec3>,
    pub albedo: Vec<Rgb>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
}

impl PixelGrads {
    fn feature(&self, p: usize) -> [f64; NF] {
        let mut g = [0.0; NF];
        if let Some(c) = self.color.get(p) {
            g[F_COLOR..F_COLOR + 3].copy_from_slice(c.as_slice());
        }
        if let Some(n) = self.normal.get(p) {
            g[F_NORMAL..F_NORMAL + 3].copy_from_slice(n.as_slice());
        }
        if let Some(a) = self.albedo.get(p) {
            g[F_ALBEDO..F_ALBEDO + 3].copy_from_slice(a.as_slice());
        }
        if let Some(r) = self.roughness.get(p) {
            g[F_ROUGH] = *r;
        }
        if let Some(m) = self.metallic.get(p) {
            g[F_METAL] = *m;
        }
        g
    }
}

/// Gradients of a render w.r.t. every Gaussian and the prefiltered light.
#[derive(Debug, Clone)]
pub struct RenderGrads {
    /// Flat per-Gaussian gradients in the [`layout`] order.
    pub gaussians: Vec<[f64; PARAM_COUNT]>,
    pub lighting: LightingGrad,
    /// Screen-space mean gradient per Gaussian in pixels (densification signal).
    pub mean2d: Vec<[f64; 2]>,
    /// Whether each Gaussian produced a splat in this view.
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default)]
struct SplatAccum {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    feat: [f64; NF],
}

impl SplatAccum {
    fn add(&mut self, o: &SplatAccum) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.opacity += o.opacity;
        for k in 0..NF {
            self.feat[k] += o.feat[k];
        }
    }
}

/// Fixed chunk size for parallel reductions; results do not depend on the
/// number of worker threads.
const REDUCE_CHUNK: usize = 256;

/// Backpropagates pixel gradients to Gaussian parameters and light texels.
/// Mask bits and occlusion flags are treated as constants.
pub fn render_backward(scene: &GaussianScene, ctx: &ShadingContext, tape: &RenderTape, grads: &PixelGrads) -> Result<RenderGrads> {
    let cam = &tape.camera;
    let (w, h) = (cam.width, cam.height);
    let bins = &tape.bins;
    let ts = bins.tile_size;
    let bg = tape.options.background;

    let per_tile: Vec<Vec<SplatAccum>> = bins
        .lists
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let mut acc = vec![SplatAccum::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (tx, ty) = (ti % bins.tiles_x, ti / bins.tiles_x);
            let mut contrib: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let p = y * w + x;
                    let g = grads.feature(p);
                    if g.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    // Replay the forward pass to recover every T_i.
                    contrib.clear();
                    let mut t = 1.0;
                    for (pos, &k) in list.iter().enumerate().take(tape.visited[p] as usize) {
                        if let Some((alpha, gauss, raw)) = splat_alpha(&tape.splats[k as usize], x, y) {
                            contrib.push((pos, alpha, gauss, raw, t));
                            t *= 1.0 - alpha;
                        }
                    }
                    let mut suffix = tape.final_t[p] * (bg.x * g[0] + bg.y * g[1] + bg.z * g[2]);
                    for &(pos, alpha, gauss, raw, t_i) in contrib.iter().rev() {
                        let k = list[pos] as usize;
                        let s = &tape.splats[k];
                        let f = &tape.features[k];
                        let fg: f64 = (0..NF).map(|c| f[c] * g[c]).sum();
                        let a = &mut acc[pos];
                        let wgt = alpha * t_i;
                        for c in 0..NF {
                            a.feat[c] += wgt * g[c];
                        }
                        let d_alpha = t_i * fg - suffix / (1.0 - alpha);
                        suffix += fg * wgt;
                        if raw > MAX_ALPHA {
                            continue;
                        }
                        a.opacity += d_alpha * gauss;
                        let d_power = d_alpha * s.opacity * gauss;
                        let dx = x as f64 + 0.5 - s.mean[0];
                        let dy = y as f64 + 0.5 - s.mean[1];
                        a.conic[0] += -0.5 * dx * dx * d_power;
                        a.conic[1] += -dx * dy * d_power;
                        a.conic[2] += -0.5 * dy * dy * d_power;
                        a.mean[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                        a.mean[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                    }
                }
            }
            acc
        })
        .collect();

    let mut splat_acc = vec![SplatAccum::default(); tape.splats.len()];
    for (list, acc) in bins.lists.iter().zip(&per_tile) {
        for (&k, a) in list.iter().zip(acc) {
            splat_acc[k as usize].add(a);
        }
    }

    let n = scene.len();
    let mut out = RenderGrads {
        gaussians: vec![[0.0; PARAM_COUNT]; n],
        lighting: LightingGrad::zeros_like(&ctx.lighting),
        mean2d: vec![[0.0; 2]; n],
        visible: vec![false; n],
    };
    let mode = tape.options.mode;
    let chunks: Vec<(Vec<(usize, [f64; PARAM_COUNT], [f64; 2])>, Option<LightingGrad>)> = splat_acc
        .par_chunks(REDUCE_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| -> Result<_> {
            let mut light: Option<LightingGrad> = None;
            let mut rows = Vec::with_capacity(chunk.len());
            for (off, a) in chunk.iter().enumerate() {
                let k = ci * REDUCE_CHUNK + off;
                let s = &tape.splats[k];
                let g = &scene.gaussians[s.index];
                let mut row = [0.0; PARAM_COUNT];
                let mut d_depth = a.feat[F_DEPTH];
                let mut d_normal = Vec3::zeros();
                if s.mask {
                    d_normal += Vec3::new(a.feat[F_NORMAL], a.feat[F_NORMAL + 1], a.feat[F_NORMAL + 2]);
                    for c in 0..3 {
                        row[layout::ALBEDO + c] += a.feat[F_ALBEDO + c];
                    }
                    row[layout::ROUGHNESS] += a.feat[F_ROUGH];
                    row[layout::METALLIC] += a.feat[F_METAL];
                    let dc = Rgb::new(a.feat[0], a.feat[1], a.feat[2]);
                    match mode {
                        RenderMode::Shaded => {
                            let rec = tape.records[k].as_ref().expect("front-facing splats carry a shade record");
                            let d_lin = dc.component_mul(&math::tonemap_grad(&rec.color, &ctx.tonemap));
                            if d_lin != Rgb::zeros() {
                                let lg = light.get_or_insert_with(|| LightingGrad::zeros_like(&ctx.lighting));
                                let sg = rec.backward(&d_lin, &g.indirect_sh, &ctx.lighting, lg);
                                let gg = pull_back_to_gaussian(g, &cam.position, &sg)?;
                                for c in 0..3 {
                                    row[layout::POSITION + c] += gg.position[c];
                                    row[layout::ALBEDO + c] += gg.albedo[c];
                                }
                                for c in 0..4 {
                                    row[layout::ROTATION + c] += gg.rotation[c];
                                }
                                row[layout::ROUGHNESS] += gg.roughness;
                                row[layout::METALLIC] += gg.metallic;
                                for (j, v) in gg.sh.iter().enumerate() {
                                    for c in 0..3 {
                                        row[layout::SH + 3 * j + c] += v[c];
                                    }
                                }
                            }
                        }
                        RenderMode::Albedo => {
                            for c in 0..3 {
                                row[layout::ALBEDO + c] += dc[c];
                            }
                        }
                        RenderMode::Normal => d_normal += dc * 0.5,
                        RenderMode::Roughness => row[layout::ROUGHNESS] += dc.sum(),
                        RenderMode::Metallic => row[layout::METALLIC] += dc.sum(),
                        RenderMode::Depth => d_depth += dc.sum(),
                    }
                } else if mode == RenderMode::Depth {
                    d_depth += a.feat[0] + a.feat[1] + a.feat[2];
                }
                if d_normal != Vec3::zeros() {
                    let mut d_r = Mat3::zeros();
                    d_r.set_column(shortest_axis(&g.log_scale), &d_normal);
                    let d_q = math::quat_to_rotmat_vjp(&g.rotation, &d_r)?;
                    for c in 0..4 {
                        row[layout::ROTATION + c] += d_q[c];
                    }
                }
                let pg = project_backward(g, cam, s, a.mean, a.conic, d_depth)?;
                for c in 0..3 {
                    row[layout::POSITION + c] += pg.position[c];
                    row[layout::LOG_SCALE + c] += pg.log_scale[c];
                }
                for c in 0..4 {
                    row[layout::ROTATION + c] += pg.rotation[c];
                }
                row[layout::OPACITY] += a.opacity * s.opacity * (1.0 - s.opacity);
                rows.push((s.index, row, a.mean));
            }
            Ok((rows, light))
        })
        .collect::<Result<_>>()?;
    for (rows, light) in chunks {
        for (i, row, m) in rows {
            out.gaussians[i] = row;
            out.mean2d[i] = m;
            out.visible[i] = true;
        }
        if let Some(l) = light {
            out.lighting.add(&l);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

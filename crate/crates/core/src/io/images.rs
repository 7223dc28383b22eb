//! PNG and Radiance HDR codecs (via the `image` crate) and frame buffer
//! export.

use std::io::Cursor;
use std::path::Path;

use image::codecs::hdr::HdrEncoder;
use image::{ImageFormat, RgbImage};

use crate::envlight::EnvironmentMap;
use crate::error::{GirError, Result};
use crate::frame::Image;
use crate::math::Rgb;
use crate::raster::FrameBuffers;

use super::pfm::Pfm;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB PNG of display values in [0, 1].
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.pixels.iter().flat_map(|c| [to_u8(c.x), to_u8(c.y), to_u8(c.z)]).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, raw).ok_or_else(|| GirError::invalid("image size"))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// 8-bit RGBA PNG with straight alpha.
pub fn write_png_rgba(path: impl AsRef<Path>, img: &Image, alpha: &[f64]) -> Result<()> {
    let raw: Vec<u8> = img
        .pixels
        .iter()
        .zip(alpha)
        .flat_map(|(c, a)| [to_u8(c.x), to_u8(c.y), to_u8(c.z), to_u8(*a)])
        .collect();
    let buf = image::RgbaImage::from_raw(img.width as u32, img.height as u32, raw).ok_or_else(|| GirError::invalid("image size"))?;
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Reads an 8-bit image; returns straight color and alpha when present.
pub fn read_png(path: impl AsRef<Path>) -> Result<(Image, Option<Vec<f64>>)> {
    let p = path.as_ref();
    if !p.exists() {
        return Err(GirError::MissingFile(p.display().to_string()));
    }
    let dynimg = image::open(p)?;
    let has_alpha = dynimg.color().has_alpha();
    let rgba = dynimg.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut px = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    for p in rgba.pixels() {
        px.push(Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0);
        alpha.push(p[3] as f64 / 255.0);
    }
    Ok((Image::new(w, h, px)?, has_alpha.then_some(alpha)))
}

/// Decodes a Radiance `.hdr` lat-long map. The image must be 2:1.
pub fn decode_hdr(bytes: &[u8]) -> Result<EnvironmentMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Hdr)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w != 2 * h {
        return Err(GirError::format("HDR", format!("environment must be 2:1, got {w}x{h}")));
    }
    let texels = img
        .pixels()
        .map(|p| Rgb::new(p[0] as f64, p[1] as f64, p[2] as f64))
        .collect();
    EnvironmentMap::new(w, h, texels)
}

pub fn read_hdr(path: impl AsRef<Path>) -> Result<EnvironmentMap> {
    let p = path.as_ref();
    let bytes = std::fs::read(p).map_err(|_| GirError::MissingFile(p.display().to_string()))?;
    decode_hdr(&bytes)
}

/// Run-length encoded RGBE.
pub fn encode_hdr(env: &EnvironmentMap) -> Result<Vec<u8>> {
    let px: Vec<image::Rgb<f32>> = env
        .texels()
        .iter()
        .map(|t| image::Rgb([t.x as f32, t.y as f32, t.z as f32]))
        .collect();
    let mut out = Vec::new();
    HdrEncoder::new(&mut out).encode(&px, env.width(), env.height())?;
    Ok(out)
}

pub fn write_hdr(path: impl AsRef<Path>, env: &EnvironmentMap) -> Result<()> {
    std::fs::write(path, encode_hdr(env)?)?;
    Ok(())
}

/// Reads an environment from `.hdr` or `.pfm` by extension.
pub fn read_env(path: impl AsRef<Path>) -> Result<EnvironmentMap> {
    let p = path.as_ref();
    match p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pfm") => Pfm::load(p)?.to_env(),
        _ => read_hdr(p),
    }
}

/// Halves the map until its height is at most `max_height`.
pub fn fit_env(mut env: EnvironmentMap, max_height: usize) -> EnvironmentMap {
    while env.height() > max_height {
        match env.downsample() {
            Some(d) => env = d,
            None => break,
        }
    }
    env
}

/// One named output buffer in display (PNG) and raw (PFM) form.
pub struct ExportedBuffer {
    pub name: &'static str,
    pub display: Image,
    pub raw: Pfm,
}

/// Every buffer of a render. Normals display as `(n + 1) / 2`; depth
/// displays normalized by its maximum.
pub fn export_buffers(fb: &FrameBuffers) -> Result<Vec<ExportedBuffer>> {
    let (w, h) = (fb.width, fb.height);
    let gray = |v: &[f64]| Image::new(w, h, v.iter().map(|x| Rgb::repeat(*x)).collect());
    let max_depth = fb.depth.iter().copied().fold(0.0, f64::max).max(1e-12);
    let depth_disp: Vec<f64> = fb.depth.iter().map(|d| d / max_depth).collect();
    let normal_disp = fb.normal.iter().map(|n| (n + Rgb::repeat(1.0)) * 0.5).collect();
    Ok(vec![
        ExportedBuffer {
            name: "color",
            display: Image::new(w, h, fb.color.clone())?,
            raw: Pfm::from_rgb(w, h, &fb.color)?,
        },
        ExportedBuffer {
            name: "alpha",
            display: gray(&fb.alpha)?,
            raw: Pfm::from_scalar(w, h, &fb.alpha)?,
        },
        ExportedBuffer {
            name: "depth",
            display: gray(&depth_disp)?,
            raw: Pfm::from_scalar(w, h, &fb.depth)?,
        },
        ExportedBuffer {
            name: "normal",
            display: Image::new(w, h, normal_disp)?,
            raw: Pfm::from_rgb(w, h, &fb.normal)?,
        },
        ExportedBuffer {
            name: "albedo",
            display: Image::new(w, h, fb.albedo.clone())?,
            raw: Pfm::from_rgb(w, h, &fb.albedo)?,
        },
        ExportedBuffer {
            name: "roughness",
            display: gray(&fb.roughness)?,
            raw: Pfm::from_scalar(w, h, &fb.roughness)?,
        },
        ExportedBuffer {
            name: "metallic",
            display: gray(&fb.metallic)?,
            raw: Pfm::from_scalar(w, h, &fb.metallic)?,
        },
    ])
}

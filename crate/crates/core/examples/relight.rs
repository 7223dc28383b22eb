//! Renders the same scene under two environments and reports how much the
//! shaded color changes while the material buffers stay fixed.
//!
//! cargo run --release --example relight -- [out_dir]

use std::sync::Arc;

use gir::envlight::{build_dfg_lut, PrefilterSettings};
use gir::io::write_png;
use gir::math::Rgb;
use gir::raster::{render, Camera, RenderMode, RenderOptions};
use gir::session::display_image;
use gir::synthetic::{context_for, sky_env, sphere_scene, studio_env};

fn main() -> gir::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "relight".into());
    std::fs::create_dir_all(&out)?;
    let scene = sphere_scene(1500, 1.0, 0);
    let dfg = Arc::new(build_dfg_lut(64)?);
    let cam = Camera::look_at([0.0, -4.0, 1.0].into(), [0.0; 3].into(), [0.0, 0.0, 1.0].into(), 200, 200, 0.7)?;
    let mut frames = Vec::new();
    for (name, env) in [("sky", sky_env(64)), ("studio", studio_env(64))] {
        let ctx = context_for(&scene, &env, PrefilterSettings::default(), dfg.clone(), 64)?;
        let fb = render(&scene, &cam, &ctx, &RenderOptions::default())?;
        write_png(format!("{out}/{name}.png"), &display_image(&fb, RenderMode::Shaded)?)?;
        let covered: Vec<Rgb> = fb.color.iter().zip(&fb.alpha).filter(|(_, a)| **a > 0.5).map(|(c, _)| *c).collect();
        let mean = covered.iter().sum::<Rgb>() / covered.len() as f64;
        println!("{name:7} mean shaded color {:.3} {:.3} {:.3}", mean.x, mean.y, mean.z);
        frames.push(fb);
    }
    assert_eq!(frames[0].albedo, frames[1].albedo);
    println!("albedo buffers identical under both environments");
    Ok(())
}

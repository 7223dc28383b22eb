//! Renders a synthetic sphere in every buffer mode and writes one PNG each.
//!
//! cargo run --release --example render_modes -- [out_dir]

use std::sync::Arc;

use gir::envlight::{build_dfg_lut, PrefilterSettings};
use gir::io::write_png;
use gir::raster::{render, Camera, RenderMode, RenderOptions};
use gir::session::display_image;
use gir::synthetic::{context_for, sky_env, sphere_scene};

fn main() -> gir::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "render_modes".into());
    std::fs::create_dir_all(&out)?;
    let scene = sphere_scene(1500, 1.0, 0);
    let ctx = context_for(&scene, &sky_env(64), PrefilterSettings::default(), Arc::new(build_dfg_lut(64)?), 64)?;
    let cam = Camera::look_at([3.0, -2.0, 1.5].into(), [0.0; 3].into(), [0.0, 0.0, 1.0].into(), 256, 256, 0.7)?;
    for mode in RenderMode::ALL {
        let fb = render(&scene, &cam, &ctx, &RenderOptions { mode, ..RenderOptions::default() })?;
        let path = format!("{out}/{}.png", mode.name());
        write_png(&path, &display_image(&fb, mode)?)?;
        println!("wrote {path}");
    }
    Ok(())
}

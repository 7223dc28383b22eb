//! Selects the metallic cap of the synthetic sphere, makes it rougher and
//! tints it red, and writes albedo and shaded renders before and after.
//!
//! cargo run --release --example material_edit -- [out_dir]

use std::sync::Arc;

use gir::envlight::{build_dfg_lut, PrefilterSettings};
use gir::io::write_png;
use gir::raster::{render, Camera, RenderMode, RenderOptions};
use gir::session::{display_image, edit_materials, MaterialOverrides, Selection};
use gir::synthetic::{context_for, sky_env, sphere_scene};

fn main() -> gir::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "material_edit".into());
    std::fs::create_dir_all(&out)?;
    let dfg = Arc::new(build_dfg_lut(64)?);
    let env = sky_env(64);
    let cam = Camera::look_at([2.5, -2.5, 2.5].into(), [0.0; 3].into(), [0.0, 0.0, 1.0].into(), 200, 200, 0.7)?;
    let mut scene = sphere_scene(1500, 1.0, 0);
    let selection: Selection = "metallic>0.5".parse()?;
    let overrides = MaterialOverrides {
        d_roughness: 0.3,
        d_metallic: 0.0,
        albedo_tint: [1.0, 0.4, 0.4],
    };
    for stage in ["before", "after"] {
        if stage == "after" {
            let n = edit_materials(&mut scene, &selection, &overrides)?;
            println!("edited {n} of {} Gaussians", scene.len());
        }
        let ctx = context_for(&scene, &env, PrefilterSettings::default(), dfg.clone(), 64)?;
        for mode in [RenderMode::Albedo, RenderMode::Shaded] {
            let fb = render(&scene, &cam, &ctx, &RenderOptions { mode, ..RenderOptions::default() })?;
            write_png(format!("{out}/{stage}_{}.png", mode.name()), &display_image(&fb, mode)?)?;
        }
    }
    println!("wrote renders to {out}");
    Ok(())
}

//! Voxelizes a scene with an inner occluder and compares occlusion of
//! Gaussians facing it with those facing away.
//!
//! cargo run --release --example occlusion

use gir::indirect::{diffuse_visibility, voxelize};
use gir::math::{Rgb, Vec3, IDENTITY_QUAT};
use gir::scene::{unravel_normal, GaussianParams};
use gir::synthetic::sphere_scene;

fn main() -> gir::Result<()> {
    let mut scene = sphere_scene(2000, 1.0, 0);
    // A solid block inside the shell.
    let mut block = GaussianParams::new(Vec3::zeros(), Vec3::repeat(0.15), IDENTITY_QUAT);
    block.albedo = Rgb::repeat(0.2);
    scene.push(block);
    let grid = voxelize(&scene, 128)?;
    println!("{} of {} voxels occupied", grid.occupied_count(), 128usize.pow(3));

    let (mut inward, mut outward) = (Vec::new(), Vec::new());
    for g in scene.gaussians.iter().take(400) {
        let n = unravel_normal(g)?;
        let radius = 3.0 * g.max_scale();
        outward.push(diffuse_visibility(&grid, &g.position, &n, 64, None, radius, 0)?);
        inward.push(diffuse_visibility(&grid, &g.position, &-n, 64, None, radius, 0)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean hemisphere visibility facing out {:.3}, facing in {:.3}", mean(&outward), mean(&inward));
    Ok(())
}

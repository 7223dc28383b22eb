//! Writes a synthetic capture in the transforms.json layout, loads it back,
//! trains from a random initialization for a few hundred iterations and
//! saves a checkpoint that the CLI and the service can open.
//!
//! cargo run --release --example dataset_train -- [out_dir] [iterations]

use std::sync::Arc;

use gir::envlight::{build_dfg_lut, GeneratorConfig, PrefilterSettings};
use gir::io::{load_dataset, load_views, write_dataset, Checkpoint};
use gir::optim::{random_init, TrainConfig, Trainer};
use gir::raster::Camera;
use gir::synthetic::{context_for, orbit_cameras, render_views, sky_env, sphere_scene};

fn main() -> gir::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "dataset_train".into()));
    let iterations: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(300);

    let truth = sphere_scene(800, 1.0, 0);
    let ctx = context_for(&truth, &sky_env(32), PrefilterSettings::training(), Arc::new(build_dfg_lut(32)?), 64)?;
    let views = render_views(&truth, &ctx, &orbit_cameras(16, 4.0, 64, 64, 0.7, 0.0)?)?;
    write_dataset(out.join("data"), "train", &views)?;

    let manifest = load_dataset(out.join("data"), "train")?;
    let views = load_views(&manifest)?;
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera).collect();
    println!("loaded {} views of {}x{}", views.len(), manifest.width, manifest.height);

    let config = TrainConfig {
        iterations,
        mask_activation: Some(iterations / 3),
        grid_res: 64,
        dfg_res: 32,
        generator: GeneratorConfig {
            channels: 4,
            height: 4,
            width: 8,
            stage_widths: vec![8, 8, 4],
            ..GeneratorConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(random_init(&cameras, 3000, 0)?, views, config)?;
    while trainer.iteration < iterations {
        trainer.run_until((trainer.iteration + 50).min(iterations))?;
        let r = trainer.log.last().unwrap();
        println!("iter {:5} loss {:.5} gaussians {}", r.iteration, r.loss.total, r.gaussians);
    }
    let ck = Checkpoint {
        scene: trainer.scene,
        generator: trainer.generator,
        config: trainer.config,
        cameras,
    };
    ck.save(out.join("checkpoint"))?;
    println!("wrote {}", out.join("checkpoint").display());
    Ok(())
}

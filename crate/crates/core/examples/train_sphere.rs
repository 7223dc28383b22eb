//! Fits a perturbed sphere scene to synthetic views and reports novel-view
//! and relit PSNR.
//!
//! cargo run --release --example train_sphere -- [iterations] [gaussians]

use std::sync::Arc;
use std::time::Instant;

use gir::envlight::{build_dfg_lut, GeneratorConfig, PrefilterSettings};
use gir::frame::{psnr, Image};
use gir::optim::{TrainConfig, Trainer};
use gir::raster::{render, RenderOptions};
use gir::synthetic::{context_for, perturbed_init, sphere_capture, studio_env};

fn main() -> gir::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let iterations = args.first().copied().unwrap_or(3000);
    let gaussians = args.get(1).copied().unwrap_or(2000);

    let settings = PrefilterSettings::training();
    let dfg = Arc::new(build_dfg_lut(64)?);
    let t0 = Instant::now();
    let cap = sphere_capture(gaussians, 32, 8, 128, 64, settings, dfg.clone(), 1)?;
    println!("capture rendered in {:.1}s", t0.elapsed().as_secs_f64());

    let init = perturbed_init(&cap.truth, 0.03, 0.3, 0.3, 2);
    let config = TrainConfig {
        iterations,
        generator: GeneratorConfig {
            channels: 8,
            height: 4,
            width: 8,
            stage_widths: vec![16, 16, 8, 8],
            ..GeneratorConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::with_parts(
        init,
        gir::envlight::EnvGenerator::new(config.generator.clone())?,
        dfg.clone(),
        cap.train.clone(),
        config,
    )?;
    let eval = |trainer: &Trainer| -> gir::Result<f64> {
        let env = trainer.generator.generate();
        let ctx = context_for(&trainer.scene, &env, settings, dfg.clone(), 128)?;
        let mut total = 0.0;
        for v in &cap.test {
            let fb = render(&trainer.scene, &v.camera, &ctx, &RenderOptions::default())?;
            let pred = Image::new(fb.width, fb.height, fb.color)?;
            total += psnr(&pred, &v.target(&gir::math::Rgb::zeros()))?;
        }
        Ok(total / cap.test.len() as f64)
    };
    let t0 = Instant::now();
    while trainer.iteration < iterations {
        let next = (trainer.iteration + 250).min(iterations);
        trainer.run_until(next)?;
        let rep = trainer.log.last().unwrap().loss;
        println!(
            "iter {:5} loss {:.5} gaussians {:5} test psnr {:.2} ({:.1}s)",
            trainer.iteration,
            rep.total,
            trainer.scene.len(),
            eval(&trainer)?,
            t0.elapsed().as_secs_f64()
        );
    }

    let relight = studio_env(64);
    let truth_ctx = context_for(&cap.truth, &relight, settings, dfg.clone(), 128)?;
    let ctx = context_for(&trainer.scene, &relight, settings, dfg, 128)?;
    let mut total = 0.0;
    for v in &cap.test {
        let a = render(&trainer.scene, &v.camera, &ctx, &RenderOptions::default())?;
        let b = render(&cap.truth, &v.camera, &truth_ctx, &RenderOptions::default())?;
        total += psnr(&Image::new(a.width, a.height, a.color)?, &Image::new(b.width, b.height, b.color)?)?;
    }
    println!("relit psnr {:.2}", total / cap.test.len() as f64);
    Ok(())
}

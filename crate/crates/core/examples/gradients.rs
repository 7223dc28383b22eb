//! Evaluates the training loss of one view and prints the gradient norm of
//! every parameter group and of the generator weights.
//!
//! cargo run --release --example gradients

use std::sync::Arc;

use gir::envlight::{build_dfg_lut, EnvGenerator, GeneratorConfig, Prefilter, PrefilterSettings};
use gir::math::Rgb;
use gir::optim::{loss_and_grad, LossWeights, OcclusionState, StepInputs};
use gir::scene::ParamGroup;
use gir::synthetic::{context_for, orbit_cameras, perturbed_init, render_views, sky_env, sphere_scene};

fn main() -> gir::Result<()> {
    let truth = sphere_scene(500, 1.0, 0);
    let dfg = Arc::new(build_dfg_lut(32)?);
    let settings = PrefilterSettings::training();
    let ctx = context_for(&truth, &sky_env(32), settings, dfg.clone(), 0)?;
    let view = render_views(&truth, &ctx, &orbit_cameras(1, 4.0, 64, 64, 0.7, 0.0)?)?.remove(0);
    let scene = perturbed_init(&truth, 0.02, 0.2, 0.0, 1);
    let generator = EnvGenerator::new(GeneratorConfig {
        channels: 4,
        height: 4,
        width: 8,
        stage_widths: vec![4, 4],
        ..GeneratorConfig::default()
    })?;
    let operator = Prefilter::new(generator.config().output_width(), generator.config().output_height(), settings)?.operator();
    let target = view.target(&Rgb::zeros());
    let (report, grads, _) = loss_and_grad(&StepInputs {
        scene: &scene,
        generator: &generator,
        operator: &operator,
        dfg: &dfg,
        occlusion: &OcclusionState::default(),
        camera: &view.camera,
        target: &target,
        background: Rgb::zeros(),
        masking: true,
        weights: &LossWeights::default(),
        tonemap: Default::default(),
        diffuse_rays: 16,
    })?;
    println!("loss {:.5} (l1 {:.5}, d-ssim {:.5}, light {:.5})", report.total, report.mae, report.dssim, report.light);
    for group in ParamGroup::ALL {
        let norm = grads.gaussians.iter().flat_map(|r| r[group.range()].to_vec()).map(|v| v * v).sum::<f64>().sqrt();
        println!("{:12} {norm:.3e}", group.name());
    }
    println!("{:12} {:.3e}", "generator", grads.generator.iter().map(|v| v * v).sum::<f64>().sqrt());
    Ok(())
}

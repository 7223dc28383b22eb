//! Fits the convolutional environment generator to a target environment map
//! with Adam on the per-texel squared error.
//!
//! cargo run --release --example env_generator -- [steps]

use gir::envlight::{EnvGenerator, GeneratorConfig};
use gir::optim::{AdamConfig, AdamState};
use gir::synthetic::studio_env;

fn main() -> gir::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let config = GeneratorConfig {
        channels: 8,
        height: 4,
        width: 8,
        stage_widths: vec![16, 8, 8],
        ..GeneratorConfig::default()
    };
    let target = studio_env(config.output_height());
    let mut generator = EnvGenerator::new(config)?;
    let mut adam = AdamState::zeros(generator.params().len());
    let adam_cfg = AdamConfig::default();
    let n = target.texels().len() as f64;
    for step in 0..=steps {
        let (env, tape) = generator.forward_with_tape();
        let diff: Vec<_> = env.texels().iter().zip(target.texels()).map(|(a, b)| a - b).collect();
        let mse = diff.iter().map(|d| d.norm_squared()).sum::<f64>() / n;
        if step % 50 == 0 {
            println!("step {step:4} mse {mse:.5}");
        }
        let d_env: Vec<_> = diff.iter().map(|d| d * (2.0 / n)).collect();
        let grads = generator.backward(&tape, &d_env);
        adam.update(&adam_cfg, generator.params_mut(), &grads, |_| 1e-2);
    }
    Ok(())
}

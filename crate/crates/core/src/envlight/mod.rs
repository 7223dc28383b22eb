//! Direct illumination: environment maps, their prefiltered lookup
//! structures, the DFG table and the learnable environment generator.

pub mod dfg;
pub mod generator;
pub mod map;
pub mod prefilter;

pub use dfg::{build_dfg_lut, DfgLut};
pub use generator::{EnvGenerator, GeneratorConfig, GeneratorTape};
pub use map::EnvironmentMap;
pub use prefilter::{
    compute_irradiance, prefilter_specular, Lighting, LightingGrad, LightingOperator, MipChain,
    Prefilter, PrefilterSettings,
};

use crate::math::Rgb;

/// Penalizes colored light: mean over texels of the L1 distance between each
/// texel and its own channel mean.
pub fn light_regularizer(env: &EnvironmentMap) -> f64 {
    let n = env.texels().len() as f64;
    env.texels()
        .iter()
        .filter(|t| !is_gray(t))
        .map(|t| {
            let m = t.sum() / 3.0;
            t.iter().map(|c| (c - m).abs()).sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`light_regularizer`] w.r.t. each texel.
pub fn light_regularizer_grad(env: &EnvironmentMap) -> Vec<Rgb> {
    let n = env.texels().len() as f64;
    env.texels()
        .iter()
        .map(|t| {
            if is_gray(t) {
                return Rgb::zeros();
            }
            let m = t.sum() / 3.0;
            let s = t.map(|c| sign(c - m));
            let mean_s = s.sum() / 3.0;
            s.map(|v| (v - mean_s) / n)
        })
        .collect()
}

fn is_gray(t: &Rgb) -> bool {
    t.x == t.y && t.y == t.z
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

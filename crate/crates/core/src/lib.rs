//! Gaussian inverse rendering on the CPU.
//!
//! Scenes are sets of anisotropic 3D Gaussians carrying a metallic-roughness
//! material. They are shaded with split-sum image-based lighting from an
//! environment map produced by a small convolutional generator, with
//! one-bounce occlusion traced through a voxelized copy of the scene, and
//! alpha-composited by a tile-based differentiable rasterizer. The optimizer
//! fits all of it to posed photographs.

pub mod envlight;
pub mod error;
pub mod frame;
pub mod indirect;
pub mod io;
pub mod math;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod service;
pub mod session;
pub mod shading;
pub mod synthetic;

pub use error::{GirError, Result};

/// Caps the global render thread pool at `GIR_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("GIR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|n| *n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; GIR_THREADS ignored");
        }
    }
}

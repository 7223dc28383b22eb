#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use gir::envlight::{EnvGenerator, GeneratorConfig};
use gir::io::Checkpoint;
use gir::math::Rgb;
use gir::optim::TrainConfig;
use gir::service::{serve, ServiceState};
use gir::synthetic::{orbit_cameras, sphere_scene};

pub fn small_config() -> TrainConfig {
    TrainConfig {
        generator: GeneratorConfig {
            channels: 4,
            height: 4,
            width: 8,
            stage_widths: vec![4, 4],
            ..GeneratorConfig::default()
        },
        grid_res: 32,
        dfg_res: 32,
        diffuse_rays: 16,
        ..TrainConfig::default()
    }
}

/// Small sphere checkpoint with a 16x32 generator and four 48x48 views.
pub fn small_checkpoint() -> Checkpoint {
    let config = small_config();
    Checkpoint {
        scene: sphere_scene(300, 1.0, 3),
        generator: EnvGenerator::new(config.generator.clone()).unwrap(),
        config,
        cameras: orbit_cameras(4, 4.0, 48, 48, 0.7, 0.0).unwrap(),
    }
}

/// Same geometry, white matte material, gray back faces, occlusion
/// disabled.
pub fn matte_checkpoint() -> Checkpoint {
    let mut ck = small_checkpoint();
    ck.config.grid_rebuild = 0;
    for g in &mut ck.scene.gaussians {
        g.albedo = Rgb::repeat(1.0);
        g.roughness = 1.0;
        g.metallic = 0.0;
        g.back_color = Rgb::repeat(0.5);
    }
    ck
}

pub fn write_checkpoint(dir: &Path, ck: &Checkpoint) {
    ck.save(dir).unwrap();
}

/// Starts the service on an ephemeral port in a background thread.
pub fn spawn_service(ck: &Checkpoint) -> String {
    let state = Arc::new(ServiceState::from_checkpoint(ck).unwrap());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            serve(listener, state).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

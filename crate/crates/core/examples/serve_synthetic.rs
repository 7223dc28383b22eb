//! Serves the synthetic sphere over HTTP until interrupted.
//!
//! cargo run --release --example serve_synthetic -- [port]
//! curl localhost:PORT/scene/meta
//! curl -X POST localhost:PORT/render -d '{"view": 0, "mode": "normal"}' -o normal.png

use std::sync::Arc;

use gir::envlight::{EnvGenerator, GeneratorConfig};
use gir::io::Checkpoint;
use gir::optim::TrainConfig;
use gir::service::{serve, ServiceState};
use gir::synthetic::{orbit_cameras, sphere_scene};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let port: u16 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8080);
    let config = TrainConfig {
        generator: GeneratorConfig {
            channels: 4,
            height: 4,
            width: 8,
            stage_widths: vec![4, 4, 4],
            ..GeneratorConfig::default()
        },
        grid_res: 64,
        ..TrainConfig::default()
    };
    let ck = Checkpoint {
        scene: sphere_scene(1500, 1.0, 0),
        generator: EnvGenerator::new(config.generator.clone())?,
        config,
        cameras: orbit_cameras(8, 4.0, 256, 256, 0.7, 0.0)?,
    };
    let state = Arc::new(ServiceState::from_checkpoint(&ck)?);
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, state).await?;
    Ok(())
}

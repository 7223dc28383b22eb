//! Training checkpoints: a directory holding the scene archive, the
//! generator parameter blob, the training configuration and the cameras.

use std::path::Path;

use crate::envlight::EnvGenerator;
use crate::error::{GirError, Result};
use crate::optim::{LogRecord, TrainConfig};
use crate::raster::Camera;
use crate::scene::GaussianScene;

use super::ply;

pub const SCENE_FILE: &str = "scene.ply";
pub const GENERATOR_FILE: &str = "generator.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const CAMERAS_FILE: &str = "cameras.json";
pub const LOG_FILE: &str = "log.jsonl";
/// The generator's environment, written for inspection and relighting.
pub const ENV_FILE: &str = "env.hdr";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub scene: GaussianScene,
    pub generator: EnvGenerator,
    pub config: TrainConfig,
    /// Training cameras, addressable by view index.
    pub cameras: Vec<Camera>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        ply::save_scene(dir.join(SCENE_FILE), &self.scene)?;
        std::fs::write(dir.join(GENERATOR_FILE), self.generator.to_bytes())?;
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.config)?)?;
        std::fs::write(dir.join(CAMERAS_FILE), serde_json::to_string_pretty(&self.cameras)?)?;
        super::images::write_hdr(dir.join(ENV_FILE), &self.generator.generate())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<u8>> {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|_| GirError::MissingFile(p.display().to_string()))
        };
        let loaded = ply::load_scene(dir.join(SCENE_FILE))?;
        if !loaded.extra_names.is_empty() {
            log::warn!("ignoring unknown PLY properties: {}", loaded.extra_names.join(", "));
        }
        let generator = EnvGenerator::from_bytes(&read(GENERATOR_FILE)?)?;
        let config: TrainConfig = serde_json::from_slice(&read(CONFIG_FILE)?)?;
        let cameras: Vec<Camera> = serde_json::from_slice(&read(CAMERAS_FILE)?)?;
        for c in &cameras {
            c.validate()?;
        }
        Ok(Self {
            scene: loaded.scene,
            generator,
            config,
            cameras,
        })
    }
}

/// Writes the training log as one JSON record per line.
pub fn write_log(path: impl AsRef<Path>, log: &[LogRecord]) -> Result<()> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envlight::GeneratorConfig;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gc = GeneratorConfig {
            channels: 4,
            height: 4,
            width: 8,
            stage_widths: vec![4],
            ..GeneratorConfig::default()
        };
        let ck = Checkpoint {
            scene: crate::synthetic::sphere_scene(20, 1.0, 5),
            generator: EnvGenerator::new(gc.clone()).unwrap(),
            config: TrainConfig {
                generator: gc,
                ..TrainConfig::default()
            },
            cameras: crate::synthetic::orbit_cameras(2, 4.0, 8, 8, 0.7, 0.0).unwrap(),
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.scene, ck.scene);
        assert_eq!(back.generator, ck.generator);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.cameras, ck.cameras);
        std::fs::remove_file(dir.path().join(GENERATOR_FILE)).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(GirError::MissingFile(_))));
    }
}

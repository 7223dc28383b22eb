//! Blender-style `transforms_{split}.json` datasets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GirError, Result};
use crate::optim::TrainView;
use crate::raster::Camera;

use super::images::{read_png, write_png_rgba};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformsFile {
    camera_angle_x: f64,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub image_path: PathBuf,
    pub camera: Camera,
}

/// Image paths and cameras of one split. Cameras use the internal
/// convention: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: String,
    pub camera_angle_x: f64,
    pub width: usize,
    pub height: usize,
    pub entries: Vec<DatasetEntry>,
}

fn resolve_image(root: &Path, file_path: &str) -> PathBuf {
    let p = root.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

pub fn load_dataset(root: impl AsRef<Path>, split: &str) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let json_path = root.join(format!("transforms_{split}.json"));
    let text = std::fs::read_to_string(&json_path).map_err(|_| GirError::MissingFile(json_path.display().to_string()))?;
    let file: TransformsFile =
        serde_json::from_str(&text).map_err(|e| GirError::format("transforms.json", format!("{}: {e}", json_path.display())))?;
    if file.frames.is_empty() {
        return Err(GirError::format("transforms.json", format!("{} lists no frames", json_path.display())));
    }
    let mut size: Option<(usize, usize)> = None;
    let mut entries = Vec::with_capacity(file.frames.len());
    for f in &file.frames {
        let image_path = resolve_image(root, &f.file_path);
        if !image_path.exists() {
            return Err(GirError::MissingFile(image_path.display().to_string()));
        }
        let (w, h) = image::image_dimensions(&image_path)?;
        let (w, h) = (w as usize, h as usize);
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                return Err(GirError::DimensionMismatch(format!(
                    "{} is {w}x{h}, expected {}x{}",
                    image_path.display(),
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        let camera = Camera::from_opengl_c2w(&f.transform_matrix, w, h, file.camera_angle_x)?;
        entries.push(DatasetEntry { image_path, camera });
    }
    let (width, height) = size.unwrap_or_default();
    Ok(DatasetManifest {
        split: split.to_string(),
        camera_angle_x: file.camera_angle_x,
        width,
        height,
        entries,
    })
}

/// Decodes every image of the manifest.
pub fn load_views(manifest: &DatasetManifest) -> Result<Vec<TrainView>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let (image, alpha) = read_png(&e.image_path)?;
            Ok(TrainView {
                camera: e.camera,
                image,
                alpha,
            })
        })
        .collect()
}

/// Writes views as RGBA PNGs under `root/split/` plus the transforms file.
/// All views must share one field of view.
pub fn write_dataset(root: impl AsRef<Path>, split: &str, views: &[TrainView]) -> Result<()> {
    let root = root.as_ref();
    let first = views.first().ok_or_else(|| GirError::invalid("no views to write"))?;
    std::fs::create_dir_all(root.join(split))?;
    let mut frames = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let rel = format!("./{split}/r_{i}");
        let ones;
        let alpha = match &v.alpha {
            Some(a) => a.as_slice(),
            None => {
                ones = vec![1.0; v.image.pixels.len()];
                &ones
            }
        };
        write_png_rgba(resolve_image(root, &rel), &v.image, alpha)?;
        frames.push(FrameEntry {
            file_path: rel,
            transform_matrix: v.camera.to_opengl_c2w(),
        });
    }
    let file = TransformsFile {
        camera_angle_x: first.camera.camera_angle_x(),
        frames,
    };
    std::fs::write(root.join(format!("transforms_{split}.json")), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

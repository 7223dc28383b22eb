//! File formats: datasets, scene archives, images, environments and
//! checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod images;
pub mod pfm;
pub mod ply;

pub use checkpoint::Checkpoint;
pub use dataset::{load_dataset, load_views, write_dataset, DatasetEntry, DatasetManifest};
pub use images::{decode_hdr, encode_hdr, encode_png, export_buffers, fit_env, read_env, read_hdr, read_png, write_hdr, write_png, ExportedBuffer};
pub use pfm::Pfm;
pub use ply::{load_scene, save_scene, LoadedScene};

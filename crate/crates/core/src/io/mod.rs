//! File formats: point clouds, cameras, descriptors, images, manifests and
//! dataset directories.

pub mod cameras;
pub mod dataset;
pub mod descriptors;
pub mod manifest;
pub mod ply;
pub mod png;

pub use cameras::{load_cameras, save_cameras, NamedCamera};
pub use dataset::{load_dataset, save_dataset};
pub use descriptors::{load_descriptors, save_descriptors};
pub use manifest::{compose_scenes, load_manifest, save_manifest, ManifestEntry, SceneManifest};
pub use ply::{load_point_cloud, save_point_cloud, PlyError};
pub use png::{load_image, load_target, save_image, save_render};

//! Differentiable point cloud renderer with per-pixel ray accumulation.
//!
//! Points carry learnable descriptors (pseudocolor plus a raw transparency).
//! Rendering projects the points, groups them into depth-sorted per-pixel
//! rays, and composites each ray front to back into a multiscale stack of
//! raw images. The whole pass is differentiable with respect to the
//! descriptors, so they can be fitted to target images.

pub mod composite;
pub mod config;
pub mod error;
pub mod fit;
pub mod grad;
pub mod gradcheck;
pub mod head;
pub mod image;
pub mod io;
pub mod loss;
pub mod optim;
pub mod par;
pub mod projection;
pub mod raster;
pub mod render;
pub mod scene;
pub mod synthetic;

pub use composite::{
    activate_alpha, blend_background, blend_ray, jitter_alphas, overlay_raw, overlay_targets, RawImage,
};
pub use config::FitConfig;
pub use error::{Error, FormatError, Result};
pub use grad::{activation_backward, backward_full, blend_ray_backward, DescriptorGrad};
pub use fit::{fit, fit_pair_with_overlay, FitReport, Fitted};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
pub use head::{HeadConfig, HeadMode};
pub use image::Image;
pub use loss::PixelLoss;
pub use optim::{Optimizer, OptimizerKind};
pub use projection::{project, pyramid_camera, ProjectedPoints};
pub use raster::{group_rays, rasterize_pyramid, ForwardState, RasterOptions, RayBuffer};
pub use render::{render, render_backward, render_forward};
pub use scene::{
    interpolate_descriptors, Background, Camera, DescriptorSet, FitDataset, PointCloud, Scene, TargetKind, View,
};

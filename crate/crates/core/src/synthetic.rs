//! Self-reconstruction data: a two-layer scene whose targets are rendered by
//! this pipeline from known descriptors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::head::HeadConfig;
use crate::raster::RasterOptions;
use crate::render::render;
use crate::scene::{Camera, DescriptorSet, FitDataset, PointCloud, Scene, TargetKind, View};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerSpec {
    pub back_points: usize,
    pub front_points: usize,
    pub descriptor_dim: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub canvas: usize,
    pub focal: f64,
    pub distance: f64,
    pub max_angle_deg: f64,
    pub levels: u32,
    pub max_ray_len: usize,
    pub front_alpha: f64,
    pub back_raw_alpha: f64,
}

impl Default for TwoLayerSpec {
    fn default() -> Self {
        Self {
            back_points: 300,
            front_points: 200,
            descriptor_dim: 8,
            train_views: 20,
            heldout_views: 5,
            canvas: 64,
            focal: 60.0,
            distance: 3.0,
            max_angle_deg: 25.0,
            levels: 2,
            max_ray_len: 50,
            front_alpha: 0.5,
            back_raw_alpha: 3.0,
        }
    }
}

/// Ground truth plus the rendered training and held-out sets.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub truth: Scene,
    pub train: FitDataset,
    pub heldout: FitDataset,
    pub raster: RasterOptions,
}

/// Opaque back plane at `z = 0` and a half-transparent slab in front of it.
pub fn two_layer_scene<R: Rng + ?Sized>(spec: &TwoLayerSpec, rng: &mut R) -> Scene {
    let m = spec.descriptor_dim;
    let mut points = Vec::with_capacity(spec.back_points + spec.front_points);
    let mut values = Vec::with_capacity(points.capacity() * m);
    let front_raw = spec.front_alpha.atanh();
    for i in 0..spec.back_points + spec.front_points {
        let back = i < spec.back_points;
        let p = if back {
            [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), 0.0]
        } else {
            [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..-0.2),
            ]
        };
        points.push(p);
        values.extend((0..m - 1).map(|_| rng.random::<f64>()));
        values.push(if back { spec.back_raw_alpha } else { front_raw });
    }
    Scene::new(
        PointCloud::new(points).expect("finite points"),
        DescriptorSet::new(m, values).expect("valid width"),
        "two-layer",
    )
    .expect("consistent scene")
}

/// Camera on a sphere around the origin, `yaw`/`pitch` in degrees from the
/// `-z` axis.
pub fn orbit_camera(spec: &TwoLayerSpec, yaw: f64, pitch: f64) -> Result<Camera> {
    let (yaw, pitch) = (yaw.to_radians(), pitch.to_radians());
    let eye = [
        spec.distance * yaw.sin() * pitch.cos(),
        spec.distance * pitch.sin(),
        -spec.distance * yaw.cos() * pitch.cos(),
    ];
    Camera::look_at(eye, [0.0; 3], [0.0, -1.0, 0.0], spec.focal, spec.canvas, spec.canvas)
}

fn views<R: Rng + ?Sized>(
    spec: &TwoLayerSpec,
    truth: &Scene,
    raster: &RasterOptions,
    prefix: &str,
    count: usize,
    rng: &mut R,
) -> Result<Vec<View>> {
    let head = HeadConfig::passthrough();
    (0..count)
        .map(|i| {
            let a = spec.max_angle_deg;
            let camera = orbit_camera(spec, rng.random_range(-a..=a), rng.random_range(-a..=a))?;
            let target = render(truth, &camera, raster, &head)?;
            Ok(View {
                id: format!("{prefix}{i:03}"),
                camera,
                target,
            })
        })
        .collect()
}

/// Builds the ground-truth scene and renders RGBA targets for every view.
pub fn self_reconstruction_set(spec: &TwoLayerSpec, seed: u64) -> Result<SyntheticSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = two_layer_scene(spec, &mut rng);
    let raster = RasterOptions::new(spec.levels, spec.max_ray_len);
    let train = views(spec, &truth, &raster, "train_", spec.train_views, &mut rng)?;
    let heldout = views(spec, &truth, &raster, "heldout_", spec.heldout_views, &mut rng)?;
    Ok(SyntheticSet {
        train: FitDataset::new(train, TargetKind::Rgba, None)?,
        heldout: FitDataset::new(heldout, TargetKind::Rgba, None)?,
        truth,
        raster,
    })
}

/// `truth` with descriptors replaced by a fresh random initialization.
pub fn random_start(truth: &Scene, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Scene {
        descriptors: DescriptorSet::random(truth.len(), truth.dim(), &mut rng),
        label: format!("{}-init", truth.label),
        jitter_exponent: truth.jitter_exponent,
        cloud: truth.cloud.clone(),
    }
}

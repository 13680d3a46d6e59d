//! Scene data shared by every stage: point clouds, descriptors, cameras.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Default descriptor width: seven pseudocolor channels plus one raw alpha.
pub const DEFAULT_DESCRIPTOR_DIM: usize = 8;

/// Half-width of the uniform interval used to initialize descriptors.
pub const DESCRIPTOR_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(i) = positions
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { positions })
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Applies `x -> linear * x + offset` to every point.
    pub fn transformed(&self, linear: &[[f64; 3]; 3], offset: &[f64; 3]) -> PointCloud {
        let positions = self
            .positions
            .iter()
            .map(|p| {
                let mut q = *offset;
                for (r, row) in linear.iter().enumerate() {
                    q[r] += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
                }
                q
            })
            .collect();
        PointCloud { positions }
    }

    pub fn concat(parts: &[&PointCloud]) -> PointCloud {
        PointCloud {
            positions: parts.iter().flat_map(|c| c.positions.iter().copied()).collect(),
        }
    }
}

/// Per-point learnable vectors, stored row-major as `len() x dim()`.
///
/// Channels `0..dim-1` are pseudocolor, channel `dim-1` is the raw
/// (pre-activation) transparency.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    values: Vec<f64>,
}

impl DescriptorSet {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "descriptor dimension must be at least 2, got {dim}"
            )));
        }
        if values.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite descriptor entry".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        assert!(dim >= 2);
        Self {
            dim,
            values: vec![0.0; len * dim],
        }
    }

    /// Uniform random initialization in `[-0.01, 0.01]` per color channel.
    /// Raw alphas are drawn from `(0, 0.01]` so no point starts in the
    /// zero-gradient region of the activation.
    pub fn random<R: Rng + ?Sized>(len: usize, dim: usize, rng: &mut R) -> Self {
        assert!(dim >= 2);
        let values = (0..len * dim)
            .map(|k| {
                let v = rng.random_range(-DESCRIPTOR_INIT_SCALE..=DESCRIPTOR_INIT_SCALE);
                if k % dim == dim - 1 {
                    v.abs().max(f64::MIN_POSITIVE)
                } else {
                    v
                }
            })
            .collect();
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn color_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn color(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim - 1]
    }

    #[inline]
    pub fn raw_alpha(&self, i: usize) -> f64 {
        self.values[(i + 1) * self.dim - 1]
    }

    pub fn set_raw_alpha(&mut self, i: usize, raw: f64) {
        self.values[(i + 1) * self.dim - 1] = raw;
    }

    pub fn concat(parts: &[&DescriptorSet]) -> Result<DescriptorSet> {
        let dim = parts.first().map_or(DEFAULT_DESCRIPTOR_DIM, |d| d.dim);
        if let Some(bad) = parts.iter().find(|d| d.dim != dim) {
            return Err(Error::ShapeMismatch(format!(
                "descriptor widths differ: {dim} vs {}",
                bad.dim
            )));
        }
        Ok(DescriptorSet {
            dim,
            values: parts.iter().flat_map(|d| d.values.iter().copied()).collect(),
        })
    }

    /// Returns a copy with points reordered so that row `i` is `self.row(perm[i])`.
    pub fn permuted(&self, perm: &[usize]) -> DescriptorSet {
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            values.extend_from_slice(self.row(p));
        }
        DescriptorSet {
            dim: self.dim,
            values,
        }
    }
}

/// Blends two descriptor sets: `(1 - t) * a + t * b`.
pub fn interpolate_descriptors(a: &DescriptorSet, b: &DescriptorSet, t: f64) -> Result<DescriptorSet> {
    if a.dim != b.dim || a.values.len() != b.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot interpolate {}x{} with {}x{}",
            a.len(),
            a.dim,
            b.len(),
            b.dim
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    // Endpoints are returned verbatim; the affine form is not exact there.
    let values = if t == 0.0 {
        a.values.clone()
    } else if t == 1.0 {
        b.values.clone()
    } else {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| (1.0 - t) * x + t * y)
            .collect()
    };
    Ok(DescriptorSet { dim: a.dim, values })
}

/// Pinhole camera with a world-to-camera rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
}

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

impl Camera {
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        focal: [f64; 2],
        principal: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            focal,
            principal,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity pose, square pixels, principal point at the canvas center.
    pub fn simple(focal: f64, width: usize, height: usize) -> Self {
        Self {
            rotation: IDENTITY3,
            translation: [0.0; 3],
            focal: [focal, focal],
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target`, with image y pointing along `-up`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = normalize(sub(target, eye))
            .ok_or_else(|| Error::InvalidCamera("eye coincides with target".into()))?;
        let right = normalize(cross(forward, up))
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [
            -dot(right, eye),
            -dot(down, eye),
            -dot(forward, eye),
        ];
        Camera::new(
            rotation,
            translation,
            [focal, focal],
            [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "canvas {}x{} is empty",
                self.width, self.height
            )));
        }
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got {:?}",
                self.focal
            )));
        }
        let all_finite = self
            .rotation
            .iter()
            .flatten()
            .chain(&self.translation)
            .chain(&self.focal)
            .chain(&self.principal)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        let err = orthonormality_error(&self.rotation);
        if err > ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        Ok(())
    }

    /// World position of the camera center.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        let mut c = [0.0; 3];
        for (k, ck) in c.iter_mut().enumerate() {
            *ck = -(r[0][k] * t[0] + r[1][k] * t[1] + r[2][k] * t[2]);
        }
        c
    }
}

pub const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Largest entry of `|M^T M - I|`.
pub fn orthonormality_error(m: &[[f64; 3]; 3]) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for row in m {
                s += row[i] * row[j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((s - target).abs());
        }
    }
    err
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot(a, a).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// A point cloud with its descriptors and per-scene jitter exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub descriptors: DescriptorSet,
    /// Exponent applied to the alpha scale factor, `alpha * p^mu`.
    pub jitter_exponent: f64,
    pub label: String,
}

pub const DEFAULT_JITTER_EXPONENT: f64 = 1.0;

impl Scene {
    pub fn new(cloud: PointCloud, descriptors: DescriptorSet, label: impl Into<String>) -> Result<Self> {
        if cloud.len() != descriptors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} descriptors",
                cloud.len(),
                descriptors.len()
            )));
        }
        Ok(Self {
            cloud,
            descriptors,
            jitter_exponent: DEFAULT_JITTER_EXPONENT,
            label: label.into(),
        })
    }

    /// A scene with random descriptors for `cloud`.
    pub fn initialized<R: Rng + ?Sized>(
        cloud: PointCloud,
        dim: usize,
        label: impl Into<String>,
        rng: &mut R,
    ) -> Self {
        let descriptors = DescriptorSet::random(cloud.len(), dim, rng);
        Self {
            cloud,
            descriptors,
            jitter_exponent: DEFAULT_JITTER_EXPONENT,
            label: label.into(),
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            cloud: PointCloud::empty(),
            descriptors: DescriptorSet::zeros(0, dim),
            jitter_exponent: DEFAULT_JITTER_EXPONENT,
            label: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Rgb,
    Rgba,
}

/// Background used when comparing against RGB targets.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Solid([f64; 3]),
    Image(Image),
}

impl Background {
    /// Background pixels for a `width x height` window; `sampler` maps each
    /// window pixel to the source pixel of an image background.
    pub fn window(
        &self,
        width: usize,
        height: usize,
        sampler: &dyn Fn(usize, usize) -> (usize, usize),
    ) -> Image {
        match self {
            Background::Solid(rgb) => Image::filled(width, height, rgb),
            Background::Image(img) => {
                let mut out = Image::new(width, height, 3);
                for y in 0..height {
                    for x in 0..width {
                        let (sx, sy) = sampler(x, y);
                        out.pixel_mut(x, y).copy_from_slice(img.pixel(sx, sy));
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: String,
    pub camera: Camera,
    pub target: Image,
}

/// Training views for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDataset {
    pub views: Vec<View>,
    pub target_kind: TargetKind,
    pub background: Option<Background>,
}

impl FitDataset {
    pub fn new(views: Vec<View>, target_kind: TargetKind, background: Option<Background>) -> Result<Self> {
        let ds = Self {
            views,
            target_kind,
            background,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidArgument("dataset has no views".into()));
        }
        let channels = match self.target_kind {
            TargetKind::Rgb => 3,
            TargetKind::Rgba => 4,
        };
        for v in &self.views {
            v.camera.validate()?;
            if v.target.width != v.camera.width || v.target.height != v.camera.height {
                return Err(Error::ShapeMismatch(format!(
                    "view {}: target {}x{} vs canvas {}x{}",
                    v.id, v.target.width, v.target.height, v.camera.width, v.camera.height
                )));
            }
            if v.target.channels != channels {
                return Err(Error::ShapeMismatch(format!(
                    "view {}: target has {} channels, expected {channels}",
                    v.id, v.target.channels
                )));
            }
            if channels == 4 && v.target.data.chunks(4).any(|p| !(0.0..=1.0).contains(&p[3])) {
                return Err(Error::InvalidArgument(format!(
                    "view {}: target alpha outside [0, 1]",
                    v.id
                )));
            }
        }
        if self.target_kind == TargetKind::Rgb && self.background.is_none() {
            return Err(Error::InvalidArgument(
                "RGB targets require a background".into(),
            ));
        }
        if let Some(Background::Image(b)) = &self.background {
            for v in &self.views {
                if !b.same_size(&v.target) || b.channels != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "background {}x{}x{} does not match view {}",
                        b.width, b.height, b.channels, v.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = DescriptorSet::new(2, vec![0.0, 1.0]).unwrap();
        let b = DescriptorSet::new(2, vec![2.0, -3.0]).unwrap();
        assert_eq!(interpolate_descriptors(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_descriptors(&a, &b, 1.0).unwrap(), b);
        let m = interpolate_descriptors(&a, &b, 0.25).unwrap();
        assert_eq!(m.values()[0], 0.5);
        assert_eq!(m.values()[1], 0.0);
    }

    #[test]
    fn interpolation_shape_mismatch() {
        let a = DescriptorSet::new(2, vec![0.0, 1.0]).unwrap();
        let b = DescriptorSet::new(2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            interpolate_descriptors(&a, &b, 0.5),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn random_init_is_small() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = DescriptorSet::random(100, 8, &mut rng);
        assert_eq!(d.len(), 100);
        assert!(d.values().iter().all(|v| v.abs() <= DESCRIPTOR_INIT_SCALE));
    }

    #[test]
    fn camera_validation() {
        let mut c = Camera::simple(100.0, 64, 64);
        assert!(c.validate().is_ok());
        c.rotation[0][0] = 1.1;
        assert!(matches!(c.validate(), Err(Error::InvalidCamera(_))));
        let mut c = Camera::simple(100.0, 64, 64);
        c.focal[1] = 0.0;
        assert!(c.validate().is_err());
        let c = Camera::simple(100.0, 0, 64);
        assert!(c.validate().is_err());
    }

    #[test]
    fn look_at_places_target_on_axis() {
        let c = Camera::look_at([1.0, 2.0, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 50.0, 32, 32).unwrap();
        let center = c.center();
        for (a, b) in center.iter().zip([1.0, 2.0, -3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_size_consistency() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 3]).unwrap();
        assert!(Scene::new(cloud.clone(), DescriptorSet::zeros(2, 8), "x").is_err());
        assert!(Scene::new(cloud, DescriptorSet::zeros(3, 8), "x").is_ok());
    }

    #[test]
    fn rgb_dataset_requires_background() {
        let cam = Camera::simple(10.0, 4, 4);
        let view = View {
            id: "0".into(),
            camera: cam,
            target: Image::new(4, 4, 3),
        };
        assert!(FitDataset::new(vec![view.clone()], TargetKind::Rgb, None).is_err());
        assert!(FitDataset::new(vec![view], TargetKind::Rgb, Some(Background::Solid([1.0; 3]))).is_ok());
    }

    proptest! {
        #[test]
        fn interpolation_self_is_identity(v in proptest::collection::vec(-10.0f64..10.0, 4), t in 0.0f64..=1.0) {
            let a = DescriptorSet::new(2, v).unwrap();
            let r = interpolate_descriptors(&a, &a, t).unwrap();
            for (x, y) in r.values().iter().zip(a.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn interpolation_swap_symmetry(
            va in proptest::collection::vec(-10.0f64..10.0, 6),
            vb in proptest::collection::vec(-10.0f64..10.0, 6),
            t in 0.0f64..=1.0,
        ) {
            let a = DescriptorSet::new(3, va).unwrap();
            let b = DescriptorSet::new(3, vb).unwrap();
            let x = interpolate_descriptors(&a, &b, t).unwrap();
            let y = interpolate_descriptors(&b, &a, 1.0 - t).unwrap();
            for (p, q) in x.values().iter().zip(y.values()) {
                prop_assert!((p - q).abs() <= 1e-12 * 10.0);
            }
        }
    }
}

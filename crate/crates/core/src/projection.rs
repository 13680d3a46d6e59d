//! Pinhole projection of world points and per-level camera derivation.

use crate::par;
use crate::scene::{Camera, PointCloud};

/// Points at or in front of this camera-space depth are rejected.
pub const Z_NEAR: f64 = 1e-4;

/// Screen-space coordinates and depths, one entry per input point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoints {
    pub screen: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ProjectedPoints {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Pixel `(x, y)` a valid point falls into.
    #[inline]
    pub fn pixel(&self, i: usize) -> Option<(usize, usize)> {
        self.valid[i].then(|| (self.screen[i][0].floor() as usize, self.screen[i][1].floor() as usize))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[inline]
fn project_one(p: &[f64; 3], cam: &Camera) -> ([f64; 2], f64, bool) {
    let r = &cam.rotation;
    let t = &cam.translation;
    let xc = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0];
    let yc = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1];
    let zc = r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2];
    if !(zc > Z_NEAR) {
        return ([f64::NAN; 2], zc, false);
    }
    let sx = cam.focal[0] * (xc / zc) + cam.principal[0];
    let sy = cam.focal[1] * (yc / zc) + cam.principal[1];
    let fx = sx.floor();
    let fy = sy.floor();
    // half-open pixel convention: x == W is off-canvas
    let valid = fx >= 0.0 && fy >= 0.0 && fx < cam.width as f64 && fy < cam.height as f64;
    ([sx, sy], zc, valid)
}

pub fn project(cloud: &PointCloud, camera: &Camera) -> ProjectedPoints {
    let pts = cloud.positions();
    let out = par::map_range(pts.len(), |i| project_one(&pts[i], camera));
    let mut screen = Vec::with_capacity(out.len());
    let mut depth = Vec::with_capacity(out.len());
    let mut valid = Vec::with_capacity(out.len());
    for (s, d, v) in out {
        screen.push(s);
        depth.push(d);
        valid.push(v);
    }
    ProjectedPoints {
        screen,
        depth,
        valid,
    }
}

/// Camera for pyramid level `level`: canvas and intrinsics divided by `2^level`.
///
/// The canvas is expected to be divisible by `2^level` (see [`padded_canvas`]);
/// otherwise the level canvas is rounded up.
pub fn pyramid_camera(camera: &Camera, level: u32) -> Camera {
    if level == 0 {
        return camera.clone();
    }
    let s = (1u64 << level) as f64;
    let div = 1usize << level;
    Camera {
        rotation: camera.rotation,
        translation: camera.translation,
        focal: [camera.focal[0] / s, camera.focal[1] / s],
        principal: [camera.principal[0] / s, camera.principal[1] / s],
        width: camera.width.div_ceil(div),
        height: camera.height.div_ceil(div),
    }
}

/// Rounds a canvas up to the next multiple of `2^levels` in each dimension.
pub fn padded_canvas(width: usize, height: usize, levels: u32) -> (usize, usize) {
    let m = 1usize << levels;
    (width.div_ceil(m) * m, height.div_ceil(m) * m)
}

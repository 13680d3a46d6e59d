//! Ray-grouped rasterization.
//!
//! Valid projected points are binned per pixel with a counting sort
//! (histogram, prefix sum, scatter), each bucket is ordered by depth with
//! ties broken by point index, and only the nearest `max_len` points are
//! kept. The resulting fixed-width [`RayBuffer`] is composited front to back
//! into a [`RawImage`] for every pyramid level.

use crate::composite::{activate_alpha, alpha_scale, RawImage, UnderAccumulator};
use crate::par;
use crate::projection::{project, pyramid_camera, ProjectedPoints};
use crate::scene::{Camera, DescriptorSet, Scene};

/// Default maximum number of points kept per ray.
pub const DEFAULT_MAX_RAY_LEN: usize = 50;

/// Per-pixel depth-sorted point indices, padded to `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBuffer {
    pub width: usize,
    pub height: usize,
    pub max_len: usize,
    /// `height x width x max_len`; unused slots hold [`RayBuffer::SENTINEL`].
    pub indices: Vec<u32>,
    /// `height x width`.
    pub lengths: Vec<u32>,
}

impl RayBuffer {
    /// Padding marker (the all-ones pattern, i.e. -1 as a signed index).
    pub const SENTINEL: u32 = u32::MAX;

    /// Stored point indices of the ray through pixel `(x, y)`.
    #[inline]
    pub fn ray(&self, x: usize, y: usize) -> &[u32] {
        let p = y * self.width + x;
        let o = p * self.max_len;
        &self.indices[o..o + self.lengths[p] as usize]
    }

    pub fn total_len(&self) -> usize {
        self.lengths.iter().map(|&l| l as usize).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    depth: f64,
    index: u32,
}

/// Points grouped by pixel in compressed-row form, not yet depth-sorted.
#[derive(Debug, Clone)]
pub struct Buckets {
    width: usize,
    height: usize,
    /// `width * height + 1` offsets into `entries`.
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

impl Buckets {
    /// Histogram and scatter pass. Points are visited in index order.
    pub fn build(proj: &ProjectedPoints, width: usize, height: usize) -> Buckets {
        assert!(proj.len() < u32::MAX as usize, "too many points for 32-bit indices");
        let npix = width * height;
        let mut pixel_of = Vec::with_capacity(proj.len());
        let mut offsets = vec![0usize; npix + 1];
        for i in 0..proj.len() {
            let pid = match proj.pixel(i) {
                Some((x, y)) if x < width && y < height => y * width + x,
                _ => usize::MAX,
            };
            if pid != usize::MAX {
                offsets[pid + 1] += 1;
            }
            pixel_of.push(pid);
        }
        for p in 0..npix {
            offsets[p + 1] += offsets[p];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![
            Entry {
                depth: 0.0,
                index: 0
            };
            offsets[npix]
        ];
        for (i, &pid) in pixel_of.iter().enumerate() {
            if pid == usize::MAX {
                continue;
            }
            entries[cursor[pid]] = Entry {
                depth: proj.depth[i],
                index: i as u32,
            };
            cursor[pid] += 1;
        }
        Buckets {
            width,
            height,
            offsets,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorts every bucket by `(depth, index)` and keeps the nearest `max_len`.
    pub fn into_ray_buffer(mut self, max_len: usize) -> RayBuffer {
        assert!(max_len >= 1, "maximum ray length must be at least 1");
        let (w, h) = (self.width, self.height);
        let mut indices = vec![RayBuffer::SENTINEL; w * h * max_len];
        let mut lengths = vec![0u32; w * h];

        // Disjoint per-row views of the entry array for the parallel pass.
        let mut work = Vec::with_capacity(h);
        {
            let mut rest: &mut [Entry] = &mut self.entries;
            let mut idx_rest: &mut [u32] = &mut indices;
            let mut len_rest: &mut [u32] = &mut lengths;
            for y in 0..h {
                let row_len = self.offsets[(y + 1) * w] - self.offsets[y * w];
                let (row, r) = std::mem::take(&mut rest).split_at_mut(row_len);
                rest = r;
                let (irow, ir) = std::mem::take(&mut idx_rest).split_at_mut(w * max_len);
                idx_rest = ir;
                let (lrow, lr) = std::mem::take(&mut len_rest).split_at_mut(w);
                len_rest = lr;
                if row_len > 0 {
                    work.push((y, row, irow, lrow));
                }
            }
        }
        let offsets = &self.offsets;
        par::for_each_owned(work, |(y, row, irow, lrow)| {
            let base = offsets[y * w];
            for x in 0..w {
                let p = y * w + x;
                let bucket = &mut row[offsets[p] - base..offsets[p + 1] - base];
                if bucket.is_empty() {
                    continue;
                }
                if bucket.len() > 1 {
                    bucket.sort_unstable_by(|a, b| {
                        a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index))
                    });
                }
                let keep = bucket.len().min(max_len);
                for (slot, e) in irow[x * max_len..x * max_len + keep].iter_mut().zip(&*bucket) {
                    *slot = e.index;
                }
                lrow[x] = keep as u32;
            }
        });
        RayBuffer {
            width: w,
            height: h,
            max_len,
            indices,
            lengths,
        }
    }
}

/// Groups valid points into per-pixel rays sorted by increasing depth.
pub fn group_rays(proj: &ProjectedPoints, width: usize, height: usize, max_len: usize) -> RayBuffer {
    Buckets::build(proj, width, height).into_ray_buffer(max_len)
}

/// Front-to-back compositing of every ray with the given activated alphas.
pub fn composite_rays(rays: &RayBuffer, descriptors: &DescriptorSet, alphas: &[f64]) -> RawImage {
    let d = descriptors.color_dim();
    let (w, l) = (rays.width, rays.max_len);
    let mut img = RawImage::zeros(w, rays.height, d);
    par::for_each_chunk_pair_mut(&mut img.features, w * d, &mut img.alpha, w, |y, feat, alpha| {
        for x in 0..w {
            let p = y * w + x;
            let len = rays.lengths[p] as usize;
            if len == 0 {
                continue;
            }
            let mut acc = UnderAccumulator::new(&mut feat[x * d..(x + 1) * d]);
            for &i in &rays.indices[p * l..p * l + len] {
                let i = i as usize;
                acc.push(descriptors.color(i), alphas[i]);
            }
            alpha[x] = acc.accumulated_alpha();
        }
    });
    img
}

/// Controls for a pyramid forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterOptions {
    /// Number of extra pyramid levels `T`; `T + 1` raw images are produced.
    pub levels: u32,
    pub max_len: usize,
    /// Alpha scale factor `p`; activated alphas are multiplied by `p^mu`.
    pub alpha_scale: Option<f64>,
    /// Debug switch: every activated alpha becomes 1 (hard z-buffer).
    pub force_opaque: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            levels: 4,
            max_len: DEFAULT_MAX_RAY_LEN,
            alpha_scale: None,
            force_opaque: false,
        }
    }
}

impl RasterOptions {
    pub fn new(levels: u32, max_len: usize) -> Self {
        Self {
            levels,
            max_len,
            ..Self::default()
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub cameras: Vec<Camera>,
    pub rays: Vec<RayBuffer>,
    /// Activated alphas before scaling, per point.
    pub base_alphas: Vec<f64>,
    pub alpha_scale: Option<f64>,
    pub jitter_exponent: f64,
    pub force_opaque: bool,
    pub point_count: usize,
    pub descriptor_dim: usize,
}

impl ForwardState {
    /// The multiplier actually applied to activated alphas.
    pub fn scale(&self) -> f64 {
        self.alpha_scale
            .map_or(1.0, |p| alpha_scale(p, self.jitter_exponent))
    }
}

/// Activated (and optionally rescaled) alpha of every point.
pub fn point_alphas(descriptors: &DescriptorSet, scale: f64, force_opaque: bool) -> (Vec<f64>, Vec<f64>) {
    let n = descriptors.len();
    let base: Vec<f64> = (0..n).map(|i| activate_alpha(descriptors.raw_alpha(i))).collect();
    let used = if force_opaque {
        vec![1.0; n]
    } else if scale == 1.0 {
        base.clone()
    } else {
        base.iter().map(|a| a * scale).collect()
    };
    (base, used)
}

/// Renders the raw-image pyramid and retains the ray buffers.
pub fn forward_pyramid(scene: &Scene, camera: &Camera, opts: &RasterOptions) -> (Vec<RawImage>, ForwardState) {
    let scale = opts
        .alpha_scale
        .map_or(1.0, |p| alpha_scale(p, scene.jitter_exponent));
    let (base_alphas, alphas) = point_alphas(&scene.descriptors, scale, opts.force_opaque);
    let mut images = Vec::with_capacity(opts.levels as usize + 1);
    let mut cameras = Vec::with_capacity(opts.levels as usize + 1);
    let mut rays = Vec::with_capacity(opts.levels as usize + 1);
    for t in 0..=opts.levels {
        let cam = pyramid_camera(camera, t);
        let proj = project(&scene.cloud, &cam);
        let buf = group_rays(&proj, cam.width, cam.height, opts.max_len);
        images.push(composite_rays(&buf, &scene.descriptors, &alphas));
        cameras.push(cam);
        rays.push(buf);
    }
    let state = ForwardState {
        cameras,
        rays,
        base_alphas,
        alpha_scale: opts.alpha_scale,
        jitter_exponent: scene.jitter_exponent,
        force_opaque: opts.force_opaque,
        point_count: scene.len(),
        descriptor_dim: scene.dim(),
    };
    (images, state)
}

/// Raw images `S[0..=levels]` of `scene` seen from `camera`.
pub fn rasterize_pyramid(scene: &Scene, camera: &Camera, levels: u32, max_len: usize) -> Vec<RawImage> {
    rasterize_pyramid_with(scene, camera, &RasterOptions::new(levels, max_len))
}

pub fn rasterize_pyramid_with(scene: &Scene, camera: &Camera, opts: &RasterOptions) -> Vec<RawImage> {
    forward_pyramid(scene, camera, opts).0
}

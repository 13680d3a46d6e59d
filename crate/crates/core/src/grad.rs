//! Reverse-mode adjoints of activation, ray compositing and the full
//! raster pass. Projection and bucketing are treated as constants, so
//! gradients reach descriptors and the jitter exponent only.

use crate::composite::RawImage;
use crate::error::{Error, Result};
use crate::par;
use crate::raster::ForwardState;
use crate::scene::Scene;

/// Gradient of a scalar loss with respect to descriptors and `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrad {
    pub dim: usize,
    /// Same layout as [`crate::scene::DescriptorSet::values`].
    pub values: Vec<f64>,
    pub mu_grad: f64,
}

impl DescriptorGrad {
    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; len * dim],
            mu_grad: 0.0,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Derivative of `tanh(max(0, raw))`, with the subgradient at 0 taken as 0.
#[inline]
pub fn activation_backward(raw: f64, upstream: f64) -> f64 {
    if raw > 0.0 {
        let t = raw.tanh();
        upstream * (1.0 - t * t)
    } else {
        0.0
    }
}

/// Adjoint of one ray's front-to-back compositing.
///
/// Prefix transmittances are stored on the forward sweep; the backward sweep
/// carries the composited color `R` and transmittance `U` of the suffix
/// behind the current sample, so nothing is divided by `1 - alpha`:
///
/// * `dC/dc_k     = alpha_k T_{k-1}`
/// * `dC/dalpha_k = T_{k-1} (c_k - R_k)`
/// * `dA/dalpha_k = T_{k-1} U_k`
pub fn blend_ray_backward(
    colors: &[f64],
    color_dim: usize,
    alphas: &[f64],
    d_color: &[f64],
    d_alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let l = alphas.len();
    assert_eq!(colors.len(), l * color_dim);
    assert_eq!(d_color.len(), color_dim);
    let mut dcolors = vec![0.0; l * color_dim];
    let mut dalphas = vec![0.0; l];
    let mut scratch = RayScratch::new(color_dim);
    ray_backward_into(
        l,
        |k| &colors[k * color_dim..(k + 1) * color_dim],
        |k| alphas[k],
        d_color,
        d_alpha,
        &mut scratch,
        |k, dc, da| {
            dcolors[k * color_dim..(k + 1) * color_dim].copy_from_slice(dc);
            dalphas[k] = da;
        },
    );
    (dcolors, dalphas)
}

struct RayScratch {
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    dc: Vec<f64>,
}

impl RayScratch {
    fn new(color_dim: usize) -> Self {
        Self {
            prefix: Vec::new(),
            suffix: vec![0.0; color_dim],
            dc: vec![0.0; color_dim],
        }
    }
}

/// Shared kernel behind [`blend_ray_backward`] and [`backward_full`].
/// `emit(k, dcolor_k, dalpha_k)` is called for `k = l-1 .. 0`.
#[inline]
fn ray_backward_into<'c>(
    l: usize,
    color: impl Fn(usize) -> &'c [f64],
    alpha: impl Fn(usize) -> f64,
    d_color: &[f64],
    d_alpha: f64,
    scratch: &mut RayScratch,
    mut emit: impl FnMut(usize, &[f64], f64),
) {
    let RayScratch { prefix, suffix, dc } = scratch;
    let color_dim = suffix.len();
    prefix.clear();
    let mut t = 1.0;
    for k in 0..l {
        prefix.push(t);
        t *= 1.0 - alpha(k);
    }
    suffix.iter_mut().for_each(|v| *v = 0.0);
    let mut suffix_t = 1.0;
    for k in (0..l).rev() {
        let a = alpha(k);
        let c = color(k);
        let tk = prefix[k];
        let w = a * tk;
        let mut dot = 0.0;
        for j in 0..color_dim {
            dc[j] = w * d_color[j];
            dot += d_color[j] * (c[j] - suffix[j]);
        }
        let da = tk * (dot + d_alpha * suffix_t);
        emit(k, dc, da);
        for j in 0..color_dim {
            suffix[j] = a * c[j] + (1.0 - a) * suffix[j];
        }
        suffix_t *= 1.0 - a;
    }
}

/// Gradient of a loss through the retained forward pass.
///
/// `pixel_grads[t]` holds `dLoss/dS[t]` in [`RawImage`] layout (features and
/// accumulated alpha). Contributions are summed over every ray and level a
/// point occupies.
pub fn backward_full(scene: &Scene, state: &ForwardState, pixel_grads: &[RawImage]) -> Result<DescriptorGrad> {
    if state.point_count != scene.len() || state.descriptor_dim != scene.dim() {
        return Err(Error::MissingForwardState(format!(
            "forward pass was run for {} points of width {}, scene has {} of width {}",
            state.point_count,
            state.descriptor_dim,
            scene.len(),
            scene.dim()
        )));
    }
    if pixel_grads.len() != state.rays.len() {
        return Err(Error::MissingForwardState(format!(
            "{} gradient levels for {} retained levels",
            pixel_grads.len(),
            state.rays.len()
        )));
    }
    let desc = &scene.descriptors;
    let dim = desc.dim();
    let cd = dim - 1;
    let n = scene.len();
    let scale = state.scale();
    let alphas: Vec<f64> = if state.force_opaque {
        vec![1.0; n]
    } else {
        state.base_alphas.iter().map(|a| a * scale).collect()
    };

    let mut grad = DescriptorGrad::zeros(n, dim);
    // dLoss / d(scaled alpha), per point
    let mut d_scaled = vec![0.0; n];

    for (rays, g) in state.rays.iter().zip(pixel_grads) {
        if g.width != rays.width || g.height != rays.height || g.color_dim != cd {
            return Err(Error::MissingForwardState(format!(
                "gradient image {}x{}x{} does not match retained level {}x{}x{cd}",
                g.width, g.height, g.color_dim, rays.width, rays.height
            )));
        }
        let (w, l) = (rays.width, rays.max_len);
        // Per row: (point, dcolor.., dalpha) records, scattered sequentially below.
        let rows: Vec<Vec<f64>> = par::map_range(rays.height, |y| {
            let mut out = Vec::new();
            let mut scratch = RayScratch::new(cd);
            for x in 0..w {
                let p = y * w + x;
                let len = rays.lengths[p] as usize;
                if len == 0 {
                    continue;
                }
                let dcol = &g.features[p * cd..(p + 1) * cd];
                let dalp = g.alpha[p];
                if dalp == 0.0 && dcol.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let ray = &rays.indices[p * l..p * l + len];
                ray_backward_into(
                    len,
                    |k| desc.color(ray[k] as usize),
                    |k| alphas[ray[k] as usize],
                    dcol,
                    dalp,
                    &mut scratch,
                    |k, dc, da| {
                        out.push(ray[k] as f64);
                        out.extend_from_slice(dc);
                        out.push(da);
                    },
                );
            }
            out
        });
        for rec in rows.iter().flat_map(|r| r.chunks_exact(cd + 2)) {
            let i = rec[0] as usize;
            let row = &mut grad.values[i * dim..i * dim + cd];
            for (gv, &v) in row.iter_mut().zip(&rec[1..=cd]) {
                *gv += v;
            }
            d_scaled[i] += rec[cd + 1];
        }
    }

    if !state.force_opaque {
        let log_p = match state.alpha_scale {
            Some(p) if p > 0.0 => p.ln(),
            _ => 0.0,
        };
        let mut mu_grad = 0.0;
        for i in 0..n {
            if d_scaled[i] == 0.0 {
                continue;
            }
            grad.values[i * dim + cd] = activation_backward(desc.raw_alpha(i), d_scaled[i] * scale);
            if state.alpha_scale.is_some() {
                mu_grad += d_scaled[i] * state.base_alphas[i] * scale * log_p;
            }
        }
        grad.mu_grad = mu_grad;
    }
    Ok(grad)
}

/// Adjoint of [`crate::composite::overlay_raw`]: returns `(d_front, d_back)`.
pub fn overlay_raw_backward(front: &RawImage, back: &RawImage, d_out: &RawImage) -> (RawImage, RawImage) {
    let d = front.color_dim;
    let mut df = RawImage::zeros(front.width, front.height, d);
    let mut db = RawImage::zeros(front.width, front.height, d);
    for i in 0..front.width * front.height {
        let (af, ab) = (front.alpha[i], back.alpha[i]);
        let mut d_af = d_out.alpha[i] * (1.0 - ab);
        let mut d_ab = d_out.alpha[i] * (1.0 - af);
        for j in 0..d {
            let g = d_out.features[i * d + j];
            let cb = back.features[i * d + j];
            df.features[i * d + j] = g;
            db.features[i * d + j] = g * (1.0 - af) * ab;
            d_af -= g * cb * ab;
            d_ab += g * cb * (1.0 - af);
        }
        df.alpha[i] = d_af;
        db.alpha[i] = d_ab;
    }
    (df, db)
}

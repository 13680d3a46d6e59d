//! Alpha activation and front-to-back accumulation of rays into raw images,
//! plus the image-level blending operators built on the same rule.

use crate::error::{Error, Result};
use crate::image::Image;

/// Blended pseudocolor and accumulated alpha for every pixel of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub color_dim: usize,
    /// `height x width x color_dim`, row-major.
    pub features: Vec<f64>,
    /// `height x width`.
    pub alpha: Vec<f64>,
}

impl RawImage {
    pub fn zeros(width: usize, height: usize, color_dim: usize) -> Self {
        Self {
            width,
            height,
            color_dim,
            features: vec![0.0; width * height * color_dim],
            alpha: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn color(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.color_dim;
        &self.features[o..o + self.color_dim]
    }

    #[inline]
    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn same_shape(&self, other: &RawImage) -> bool {
        self.width == other.width && self.height == other.height && self.color_dim == other.color_dim
    }

    /// Copies the window `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RawImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let d = self.color_dim;
        let mut out = RawImage::zeros(w, h, d);
        for y in 0..h {
            let src = (y0 + y) * self.width + x0;
            out.alpha[y * w..(y + 1) * w].copy_from_slice(&self.alpha[src..src + w]);
            out.features[y * w * d..(y + 1) * w * d]
                .copy_from_slice(&self.features[src * d..(src + w) * d]);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.features.iter().chain(&self.alpha).all(|&v| v == 0.0)
    }
}

/// `tanh(max(0, raw))`.
#[inline]
pub fn activate_alpha(raw: f64) -> f64 {
    if raw > 0.0 {
        raw.tanh()
    } else {
        0.0
    }
}

/// Running state of the front-to-back UNDER operator over one ray.
///
/// Starts with zero color and unit transmittance; each pushed sample adds
/// `alpha * T * c` and attenuates `T` by `1 - alpha`.
pub struct UnderAccumulator<'a> {
    color: &'a mut [f64],
    transmittance: f64,
}

impl<'a> UnderAccumulator<'a> {
    /// `color` must be zeroed by the caller.
    #[inline]
    pub fn new(color: &'a mut [f64]) -> Self {
        Self {
            color,
            transmittance: 1.0,
        }
    }

    #[inline]
    pub fn push(&mut self, c: &[f64], alpha: f64) {
        let w = alpha * self.transmittance;
        for (o, &ci) in self.color.iter_mut().zip(c) {
            *o += w * ci;
        }
        self.transmittance *= 1.0 - alpha;
    }

    #[inline]
    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    #[inline]
    pub fn accumulated_alpha(&self) -> f64 {
        1.0 - self.transmittance
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    match alphas.iter().position(|a| !(0.0..=1.0).contains(a)) {
        Some(k) => Err(Error::InvalidArgument(format!(
            "alpha[{k}] = {} outside [0, 1]; activate before blending",
            alphas[k]
        ))),
        None => Ok(()),
    }
}

/// Composites one ray front to back. `colors` holds `alphas.len()` rows of
/// width `color_dim`. Returns `(C_final, A_final)`.
pub fn blend_ray(colors: &[f64], color_dim: usize, alphas: &[f64]) -> Result<(Vec<f64>, f64)> {
    if colors.len() != alphas.len() * color_dim {
        return Err(Error::ShapeMismatch(format!(
            "{} color values for {} samples of width {color_dim}",
            colors.len(),
            alphas.len()
        )));
    }
    check_alphas(alphas)?;
    let mut out = vec![0.0; color_dim];
    let mut acc = UnderAccumulator::new(&mut out);
    for (k, &a) in alphas.iter().enumerate() {
        acc.push(&colors[k * color_dim..(k + 1) * color_dim], a);
    }
    let a_final = acc.accumulated_alpha();
    Ok((out, a_final))
}

/// `(1 - A) * B + RGB`, with the rendered color taken as premultiplied.
pub fn blend_background(rgb: &Image, alpha: &Image, background: &Image) -> Result<Image> {
    rgb.check_size(alpha, "rendered rgb/alpha")?;
    rgb.check_size(background, "background")?;
    if rgb.channels != 3 || alpha.channels != 1 || background.channels != 3 {
        return Err(Error::ShapeMismatch("expected RGB, A and RGB planes".into()));
    }
    let mut out = Image::new(rgb.width, rgb.height, 3);
    for i in 0..rgb.width * rgb.height {
        let a = alpha.data[i];
        for c in 0..3 {
            out.data[i * 3 + c] = (1.0 - a) * background.data[i * 3 + c] + rgb.data[i * 3 + c];
        }
    }
    Ok(out)
}

/// Multiplier `p^mu` applied to activated alphas.
#[inline]
pub fn alpha_scale(p: f64, mu: f64) -> f64 {
    p.powf(mu)
}

/// Rescales activated alphas by `p^mu`.
pub fn jitter_alphas(alphas: &[f64], p: f64, mu: f64) -> Vec<f64> {
    let s = alpha_scale(p, mu);
    alphas.iter().map(|a| a * s).collect()
}

#[inline]
fn overlay_pixel(cf: &[f64], af: f64, cb: &[f64], ab: f64, out: &mut [f64]) -> f64 {
    for ((o, &f), &b) in out.iter_mut().zip(cf).zip(cb) {
        *o = f + b * (1.0 - af) * ab;
    }
    1.0 - (1.0 - ab) * (1.0 - af)
}

/// Places `front` over `back`:
/// `C = C_f + C_b (1 - A_f) A_b`, `A = 1 - (1 - A_b)(1 - A_f)`.
pub fn overlay_raw(front: &RawImage, back: &RawImage) -> Result<RawImage> {
    if !front.same_shape(back) {
        return Err(Error::ShapeMismatch(format!(
            "overlay of {}x{}x{} onto {}x{}x{}",
            front.width, front.height, front.color_dim, back.width, back.height, back.color_dim
        )));
    }
    let d = front.color_dim;
    let mut out = RawImage::zeros(front.width, front.height, d);
    for i in 0..front.width * front.height {
        out.alpha[i] = overlay_pixel(
            &front.features[i * d..(i + 1) * d],
            front.alpha[i],
            &back.features[i * d..(i + 1) * d],
            back.alpha[i],
            &mut out.features[i * d..(i + 1) * d],
        );
    }
    Ok(out)
}

/// [`overlay_raw`] applied to RGBA target images.
pub fn overlay_targets(front: &Image, back: &Image) -> Result<Image> {
    front.check_size(back, "overlay targets")?;
    if front.channels != 4 || back.channels != 4 {
        return Err(Error::ShapeMismatch("overlay targets must be RGBA".into()));
    }
    let mut out = Image::new(front.width, front.height, 4);
    for ((f, b), o) in front
        .data
        .chunks(4)
        .zip(back.data.chunks(4))
        .zip(out.data.chunks_mut(4))
    {
        let (oc, oa) = o.split_at_mut(3);
        oa[0] = overlay_pixel(&f[..3], f[3], &b[..3], b[3], oc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Step-by-step scalar evaluation of the UNDER recurrence.
    fn oracle(colors: &[Vec<f64>], alphas: &[f64]) -> (Vec<f64>, f64) {
        let d = colors.first().map_or(0, |c| c.len());
        let mut c_acc = vec![0.0; d];
        let mut a_acc = 1.0;
        for k in 0..alphas.len() {
            for j in 0..d {
                c_acc[j] = c_acc[j] + alphas[k] * a_acc * colors[k][j];
            }
            a_acc = (1.0 - alphas[k]) * a_acc;
        }
        (c_acc, 1.0 - a_acc)
    }

    #[test]
    fn activation_values() {
        assert_eq!(activate_alpha(-2.0), 0.0);
        assert_eq!(activate_alpha(0.0), 0.0);
        // tanh(1) = (e^2 - 1) / (e^2 + 1)
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let expected = (e2 - 1.0) / (e2 + 1.0);
        assert!((activate_alpha(1.0) - expected).abs() < 1e-15);
        assert!((activate_alpha(1.0) - 0.761594).abs() < 1e-6);
    }

    #[test]
    fn blend_examples() {
        let (c, a) = blend_ray(&[], 2, &[]).unwrap();
        assert_eq!((c, a), (vec![0.0, 0.0], 0.0));
        let (c, a) = blend_ray(&[1.0, 0.0], 2, &[1.0]).unwrap();
        assert_eq!((c, a), (vec![1.0, 0.0], 1.0));
        let (c, a) = blend_ray(&[1.0, 0.0, 0.0, 1.0], 2, &[0.5, 0.5]).unwrap();
        let (oc, oa) = oracle(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.5, 0.5]);
        assert_eq!(c, oc);
        assert_eq!(a, oa);
        assert_eq!(c, vec![0.5, 0.25]);
        assert_eq!(a, 0.75);
    }

    #[test]
    fn blend_rejects_unactivated_alpha() {
        assert!(blend_ray(&[1.0], 1, &[1.5]).is_err());
        assert!(blend_ray(&[1.0], 1, &[-0.1]).is_err());
        assert!(blend_ray(&[1.0, 2.0], 1, &[0.5]).is_err());
    }

    #[test]
    fn background_examples() {
        let rgb = Image::filled(2, 1, &[0.2, 0.0, 0.0]);
        let bg = Image::filled(2, 1, &[1.0, 1.0, 1.0]);
        let half = Image::filled(2, 1, &[0.5]);
        let out = blend_background(&rgb, &half, &bg).unwrap();
        for px in out.data.chunks(3) {
            assert!((px[0] - 0.7).abs() < 1e-15);
            assert_eq!(&px[1..], &[0.5, 0.5]);
        }
        let one = Image::filled(2, 1, &[1.0]);
        assert_eq!(blend_background(&rgb, &one, &bg).unwrap(), rgb);
        let zero_rgb = Image::new(2, 1, 3);
        let zero_a = Image::new(2, 1, 1);
        assert_eq!(blend_background(&zero_rgb, &zero_a, &bg).unwrap(), bg);
        let small = Image::new(1, 1, 3);
        assert!(blend_background(&rgb, &half, &small).is_err());
    }

    #[test]
    fn jitter_examples() {
        assert_eq!(jitter_alphas(&[0.3, 0.9], 1.0, 2.5), vec![0.3, 0.9]);
        assert_eq!(jitter_alphas(&[0.3, 0.9], 0.0, 1.0), vec![0.0, 0.0]);
        assert_eq!(jitter_alphas(&[0.8], 0.5, 2.0), vec![0.2]);
    }

    fn raw1(c: f64, a: f64) -> RawImage {
        RawImage {
            width: 1,
            height: 1,
            color_dim: 1,
            features: vec![c],
            alpha: vec![a],
        }
    }

    #[test]
    fn overlay_examples() {
        let back = raw1(0.8, 0.6);
        let o = overlay_raw(&raw1(0.0, 0.0), &back).unwrap();
        assert!((o.features[0] - 0.8 * 0.6).abs() < 1e-15);
        assert_eq!(o.alpha[0], 0.6);
        let o = overlay_raw(&raw1(0.3, 1.0), &back).unwrap();
        assert_eq!((o.features[0], o.alpha[0]), (0.3, 1.0));
        let o = overlay_raw(&raw1(0.5, 0.5), &raw1(1.0, 1.0)).unwrap();
        assert_eq!((o.features[0], o.alpha[0]), (1.0, 1.0));
        assert!(overlay_raw(&raw1(0.0, 0.0), &RawImage::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn overlay_target_examples() {
        let f = Image::filled(1, 1, &[0.5, 0.5, 0.5, 0.5]);
        let b = Image::filled(1, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(overlay_targets(&f, &b).unwrap().data, vec![1.0, 1.0, 1.0, 1.0]);
        let z = Image::new(1, 1, 4);
        let b2 = Image::filled(1, 1, &[0.4, 0.2, 0.0, 0.5]);
        assert_eq!(overlay_targets(&z, &b2).unwrap().data, vec![0.2, 0.1, 0.0, 0.5]);
        let opaque = Image::filled(1, 1, &[0.1, 0.2, 0.3, 1.0]);
        assert_eq!(overlay_targets(&opaque, &b2).unwrap(), opaque);
    }

    fn ray_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (0usize..12).prop_flat_map(|l| {
            (
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), l),
                proptest::collection::vec(0.0f64..=1.0, l),
            )
        })
    }

    fn flat(c: &[Vec<f64>]) -> Vec<f64> {
        c.iter().flatten().copied().collect()
    }

    proptest! {
        #[test]
        fn split_property((colors, alphas) in ray_strategy(), cut in 0usize..12) {
            let cut = cut.min(alphas.len());
            let (ct, at) = blend_ray(&flat(&colors), 3, &alphas).unwrap();
            let (cp, ap) = blend_ray(&flat(&colors[..cut]), 3, &alphas[..cut]).unwrap();
            let (cs, as_) = blend_ray(&flat(&colors[cut..]), 3, &alphas[cut..]).unwrap();
            let tp = 1.0 - ap;
            for j in 0..3 {
                prop_assert!((ct[j] - (cp[j] + tp * cs[j])).abs() <= 1e-12);
            }
            prop_assert!(((1.0 - at) - tp * (1.0 - as_)).abs() <= 1e-12);
        }

        #[test]
        fn occlusion_and_bounds((colors, alphas) in ray_strategy(), tail in ray_strategy()) {
            let (c, a) = blend_ray(&flat(&colors), 3, &alphas).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(c.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            // an opaque front sample hides everything behind it
            let mut c1 = vec![vec![0.25, -0.5, 0.75]];
            c1.extend(tail.0.iter().cloned());
            let mut a1 = vec![1.0];
            a1.extend(tail.1.iter().copied());
            let (co, ao) = blend_ray(&flat(&c1), 3, &a1).unwrap();
            prop_assert_eq!(co, vec![0.25, -0.5, 0.75]);
            prop_assert_eq!(ao, 1.0);
        }

        #[test]
        fn padding_is_neutral((colors, alphas) in ray_strategy(), pad in 0usize..5) {
            let (c, a) = blend_ray(&flat(&colors), 3, &alphas).unwrap();
            let mut cp = flat(&colors);
            cp.extend(std::iter::repeat_n(0.7, pad * 3));
            let mut ap = alphas.clone();
            ap.extend(std::iter::repeat_n(0.0, pad));
            let (c2, a2) = blend_ray(&cp, 3, &ap).unwrap();
            prop_assert_eq!(c, c2);
            prop_assert_eq!(a, a2);
        }

        #[test]
        fn jitter_is_monotone((colors, alphas) in ray_strategy(), p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, mu in 0.0f64..3.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let (_, a_lo) = blend_ray(&flat(&colors), 3, &jitter_alphas(&alphas, lo, mu)).unwrap();
            let (_, a_hi) = blend_ray(&flat(&colors), 3, &jitter_alphas(&alphas, hi, mu)).unwrap();
            prop_assert!(a_lo <= a_hi);
        }
    }
}

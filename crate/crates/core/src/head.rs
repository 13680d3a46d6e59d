//! Per-pixel decoding of the raw-image pyramid into an RGBA image.
//!
//! `Passthrough` reads pseudocolor channels 0..3 as premultiplied RGB and
//! the accumulated alpha as A, taking each pixel from the finest level whose
//! alpha exceeds the threshold (the coarsest level otherwise). `Linear` maps
//! the level-0 raw channels affinely to RGBA with learnable weights.

use serde::{Deserialize, Serialize};

use crate::composite::RawImage;
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_FUSION_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    Passthrough,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub mode: HeadMode,
    /// Level-fusion threshold for passthrough mode.
    pub threshold: f64,
    /// `dim x 4` row-major; only used in linear mode.
    pub weights: Vec<f64>,
    pub bias: [f64; 4],
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::passthrough()
    }
}

/// Which level each output pixel was taken from (passthrough only).
#[derive(Debug, Clone, Default)]
pub struct HeadCache {
    selected: Vec<u8>,
}

/// Gradient of the loss with respect to linear head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub weights: Vec<f64>,
    pub bias: [f64; 4],
}

impl HeadConfig {
    pub fn passthrough() -> Self {
        Self {
            mode: HeadMode::Passthrough,
            threshold: DEFAULT_FUSION_THRESHOLD,
            weights: Vec::new(),
            bias: [0.0; 4],
        }
    }

    /// Linear head that starts out copying channels 0..3 and alpha.
    pub fn linear(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * 4];
        for c in 0..3.min(dim - 1) {
            weights[c * 4 + c] = 1.0;
        }
        weights[(dim - 1) * 4 + 3] = 1.0;
        Self {
            mode: HeadMode::Linear,
            threshold: DEFAULT_FUSION_THRESHOLD,
            weights,
            bias: [0.0; 4],
        }
    }

    pub fn for_mode(mode: HeadMode, dim: usize) -> Self {
        match mode {
            HeadMode::Passthrough => Self::passthrough(),
            HeadMode::Linear => Self::linear(dim),
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        match self.mode {
            HeadMode::Passthrough if dim < 4 => Err(Error::InvalidArgument(format!(
                "passthrough head needs at least 3 pseudocolor channels, descriptors have {}",
                dim - 1
            ))),
            HeadMode::Linear if self.weights.len() != dim * 4 => Err(Error::ShapeMismatch(format!(
                "linear head has {} weights, expected {}x4",
                self.weights.len(),
                dim
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_learnable(&self) -> bool {
        self.mode == HeadMode::Linear
    }

    pub fn forward(&self, pyramid: &[RawImage]) -> Result<(Image, HeadCache)> {
        let base = pyramid
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty pyramid".into()))?;
        self.check(base.color_dim + 1)?;
        let (w, h) = (base.width, base.height);
        let mut out = Image::new(w, h, 4);
        let mut cache = HeadCache::default();
        match self.mode {
            HeadMode::Passthrough => {
                let last = pyramid.len() - 1;
                cache.selected = vec![0; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let t = (0..last)
                            .find(|&t| pyramid[t].alpha_at(x >> t, y >> t) > self.threshold)
                            .unwrap_or(last);
                        let lvl = &pyramid[t];
                        let px = out.pixel_mut(x, y);
                        px[..3].copy_from_slice(&lvl.color(x >> t, y >> t)[..3]);
                        px[3] = lvl.alpha_at(x >> t, y >> t);
                        cache.selected[y * w + x] = t as u8;
                    }
                }
            }
            HeadMode::Linear => {
                let dim = base.color_dim + 1;
                for y in 0..h {
                    for x in 0..w {
                        let col = base.color(x, y);
                        let a = base.alpha_at(x, y);
                        let px = out.pixel_mut(x, y);
                        for c in 0..4 {
                            let mut v = self.bias[c] + a * self.weights[(dim - 1) * 4 + c];
                            for (m, &s) in col.iter().enumerate() {
                                v += s * self.weights[m * 4 + c];
                            }
                            px[c] = v;
                        }
                    }
                }
            }
        }
        Ok((out, cache))
    }

    /// Pulls `d_out` (RGBA gradient) back onto the pyramid and the head.
    pub fn backward(&self, pyramid: &[RawImage], cache: &HeadCache, d_out: &Image) -> (Vec<RawImage>, HeadGrad) {
        let mut grads: Vec<RawImage> = pyramid
            .iter()
            .map(|r| RawImage::zeros(r.width, r.height, r.color_dim))
            .collect();
        let mut hg = HeadGrad {
            weights: vec![0.0; self.weights.len()],
            bias: [0.0; 4],
        };
        let base = &pyramid[0];
        let (w, h, cd) = (base.width, base.height, base.color_dim);
        match self.mode {
            HeadMode::Passthrough => {
                for y in 0..h {
                    for x in 0..w {
                        let t = cache.selected[y * w + x] as usize;
                        let g = &mut grads[t];
                        let (lx, ly) = (x >> t, y >> t);
                        let p = ly * g.width + lx;
                        let d = d_out.pixel(x, y);
                        for c in 0..3 {
                            g.features[p * cd + c] += d[c];
                        }
                        g.alpha[p] += d[3];
                    }
                }
            }
            HeadMode::Linear => {
                let dim = cd + 1;
                let g = &mut grads[0];
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let d = d_out.pixel(x, y);
                        let col = base.color(x, y);
                        let a = base.alpha_at(x, y);
                        for c in 0..4 {
                            hg.bias[c] += d[c];
                            hg.weights[(dim - 1) * 4 + c] += a * d[c];
                        }
                        for m in 0..cd {
                            let mut s = 0.0;
                            for c in 0..4 {
                                s += self.weights[m * 4 + c] * d[c];
                                hg.weights[m * 4 + c] += col[m] * d[c];
                            }
                            g.features[p * cd + m] = s;
                        }
                        g.alpha[p] = (0..4).map(|c| self.weights[(dim - 1) * 4 + c] * d[c]).sum();
                    }
                }
            }
        }
        (grads, hg)
    }

    /// Flat parameter vector (weights then bias) for the optimizer.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut()).collect()
    }
}

impl HeadGrad {
    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }
}

//! Per-pixel image losses and quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelLoss {
    L1,
    L2,
}

/// Scalar loss and its gradient with respect to the RGBA prediction.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Image,
}

/// Mean color loss over RGB channels plus `beta * mean |dA|` when the target
/// has alpha. An RGB target is compared against the prediction composited
/// over `background`.
pub fn compute_loss(
    pred: &Image,
    target: &Image,
    kind: PixelLoss,
    beta: f64,
    background: Option<&Image>,
) -> Result<LossOutput> {
    if pred.channels != 4 {
        return Err(Error::ShapeMismatch("prediction must be RGBA".into()));
    }
    pred.check_size(target, "loss target")?;
    let n = (pred.width * pred.height) as f64;
    let mut grad = Image::new(pred.width, pred.height, 4);
    let mut rgb_sum = 0.0;
    let mut alpha_sum = 0.0;
    let per_channel = |d: f64| match kind {
        PixelLoss::L1 => (d.abs(), d.signum() * (d != 0.0) as u8 as f64),
        PixelLoss::L2 => (d * d, 2.0 * d),
    };
    let rgb_norm = 1.0 / (3.0 * n);
    match target.channels {
        4 => {
            for ((p, t), g) in pred.data.chunks(4).zip(target.data.chunks(4)).zip(grad.data.chunks_mut(4)) {
                for c in 0..3 {
                    let (v, dv) = per_channel(p[c] - t[c]);
                    rgb_sum += v;
                    g[c] = dv * rgb_norm;
                }
                let da = p[3] - t[3];
                alpha_sum += da.abs();
                g[3] = beta * da.signum() * (da != 0.0) as u8 as f64 / n;
            }
        }
        3 => {
            let bg = background.ok_or_else(|| {
                Error::InvalidArgument("an RGB target needs a background to blend against".into())
            })?;
            pred.check_size(bg, "background")?;
            for (((p, t), b), g) in pred
                .data
                .chunks(4)
                .zip(target.data.chunks(3))
                .zip(bg.data.chunks(3))
                .zip(grad.data.chunks_mut(4))
            {
                let mut da = 0.0;
                for c in 0..3 {
                    let blended = (1.0 - p[3]) * b[c] + p[c];
                    let (v, dv) = per_channel(blended - t[c]);
                    rgb_sum += v;
                    g[c] = dv * rgb_norm;
                    da -= dv * rgb_norm * b[c];
                }
                g[3] = da;
            }
        }
        c => return Err(Error::ShapeMismatch(format!("target has {c} channels"))),
    }
    let mut value = rgb_sum * rgb_norm;
    if target.channels == 4 {
        value += beta * alpha_sum / n;
    }
    Ok(LossOutput { value, grad })
}

/// Mean absolute difference over all channels.
pub fn l1_error(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1) as f64;
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// Peak signal-to-noise ratio for unit-range images, in dB.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let n = a.data.len().max(1) as f64;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

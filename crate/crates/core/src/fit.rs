//! Descriptor fitting by gradient descent through the full render pass.
//!
//! Each step samples a view, applies zoom (focal scaling) and a random crop
//! aligned to the coarsest pyramid level, optionally rescales alphas by
//! `p^mu` (alpha jitter) with the target scaled by `p`, renders, decodes,
//! and updates descriptors, head weights and `mu`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composite::{blend_background, overlay_raw, overlay_targets, RawImage};
use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::grad::{backward_full, overlay_raw_backward};
use crate::head::HeadConfig;
use crate::image::Image;
use crate::loss::{compute_loss, l1_error, psnr};
use crate::optim::Optimizer;
use crate::raster::{forward_pyramid, ForwardState, RasterOptions};
use crate::render::{pad_image, padded_camera, render};
use crate::scene::{Background, Camera, FitDataset, Scene, TargetKind, View};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub scene: String,
    pub view: String,
    pub l1: f64,
    pub psnr: f64,
}

/// Seconds spent per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub sample: f64,
    pub render: f64,
    pub loss: f64,
    pub backward: f64,
    pub update: f64,
    pub evaluate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_curve: Vec<f64>,
    pub views: Vec<ViewMetrics>,
    pub timings: PhaseTimings,
    pub jitter_exponents: Vec<f64>,
}

impl FitReport {
    pub fn mean_psnr(&self) -> f64 {
        let n = self.views.len().max(1) as f64;
        self.views.iter().map(|v| v.psnr).sum::<f64>() / n
    }
}

/// Per-iteration progress notification.
#[derive(Debug, Clone, Serialize)]
pub struct Progress {
    pub iteration: usize,
    pub loss: f64,
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub scene: Scene,
    pub head: HeadConfig,
    pub report: FitReport,
}

#[derive(Debug, Clone)]
pub struct FittedPair {
    pub front: Scene,
    pub back: Scene,
    pub head: HeadConfig,
    pub report: FitReport,
}

/// A failed fit with everything produced up to the failure.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub scenes: Vec<Scene>,
    pub head: HeadConfig,
    pub report: FitReport,
}

impl std::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for FitFailure {}

/// One training sample: camera window, matching target and background.
#[derive(Debug, Clone)]
pub struct Sample {
    pub camera: Camera,
    /// RGBA (premultiplied) or RGB, already jitter-scaled.
    pub target: Image,
    pub background: Option<Image>,
    pub jitter: Option<f64>,
}

/// Source pixel for output pixel `u` of a window at `offset` under `zoom`.
#[inline]
fn source_index(u: usize, offset: usize, zoom: f64, limit: usize) -> usize {
    if zoom == 1.0 {
        u + offset
    } else {
        ((((u + offset) as f64 + 0.5) / zoom).floor() as usize).min(limit - 1)
    }
}

/// Zoom and crop window applied to a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub zoom: f64,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(camera: &Camera) -> Self {
        Self {
            zoom: 1.0,
            x0: 0,
            y0: 0,
            width: camera.width,
            height: camera.height,
        }
    }

    pub fn camera(&self, camera: &Camera) -> Camera {
        Camera {
            focal: [camera.focal[0] * self.zoom, camera.focal[1] * self.zoom],
            principal: [
                camera.principal[0] * self.zoom - self.x0 as f64,
                camera.principal[1] * self.zoom - self.y0 as f64,
            ],
            width: self.width,
            height: self.height,
            ..camera.clone()
        }
    }

    /// Nearest-pixel lookup of `img` through the window.
    pub fn sample_image(&self, img: &Image) -> Image {
        if self.zoom == 1.0 && self.x0 == 0 && self.y0 == 0 && self.width == img.width && self.height == img.height {
            return img.clone();
        }
        let mut out = Image::new(self.width, self.height, img.channels);
        for v in 0..self.height {
            let sy = source_index(v, self.y0, self.zoom, img.height);
            for u in 0..self.width {
                let sx = source_index(u, self.x0, self.zoom, img.width);
                out.pixel_mut(u, v).copy_from_slice(img.pixel(sx, sy));
            }
        }
        out
    }

    fn background(&self, bg: &Background) -> Image {
        match bg {
            Background::Solid(c) => Image::filled(self.width, self.height, c),
            Background::Image(img) => self.sample_image(img),
        }
    }
}

/// Draws a random zoom and a crop aligned to multiples of `2^levels`.
pub fn sample_window<R: Rng + ?Sized>(camera: &Camera, cfg: &FitConfig, rng: &mut R) -> Window {
    let (lo, hi) = cfg.zoom_range;
    let zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (zw, zh) = if zoom == 1.0 {
        (camera.width, camera.height)
    } else {
        (
            ((camera.width as f64 * zoom).round() as usize).max(1),
            ((camera.height as f64 * zoom).round() as usize).max(1),
        )
    };
    let (cw, ch) = cfg.crop_size.unwrap_or((zw, zh));
    let (cw, ch) = (cw.min(zw), ch.min(zh));
    let step = 1usize << cfg.pyramid_levels;
    let mut offset = |slack: usize| {
        let k = slack / step;
        if k > 0 {
            rng.random_range(0..=k) * step
        } else {
            0
        }
    };
    let x0 = offset(zw - cw);
    let y0 = offset(zh - ch);
    Window {
        zoom,
        x0,
        y0,
        width: cw,
        height: ch,
    }
}

/// Builds the training sample for `view` through `window`.
pub fn make_sample(
    view: &View,
    data: &FitDataset,
    window: &Window,
    jitter: Option<f64>,
) -> Sample {
    let camera = window.camera(&view.camera);
    let mut target = window.sample_image(&view.target);
    let background = data.background.as_ref().map(|b| window.background(b));
    if let Some(p) = jitter {
        if data.target_kind == TargetKind::Rgba {
            target.data.iter_mut().for_each(|v| *v *= p);
        }
    }
    Sample {
        camera,
        target,
        background,
        jitter,
    }
}

/// Target in the space the loss compares: RGBA, or RGB over the background.
fn loss_target(target: &Image, background: Option<&Image>) -> Result<Image> {
    match (target.channels, background) {
        (4, Some(bg)) => {
            let (rgb, a) = target.split_alpha();
            blend_background(&rgb, &a, bg)
        }
        _ => Ok(target.clone()),
    }
}

fn check_dataset(scene: &Scene, data: &FitDataset, cfg: &FitConfig, head: &HeadConfig) -> Result<()> {
    cfg.validate()?;
    data.validate()?;
    head.check(scene.dim())?;
    if cfg.use_jitter && data.target_kind != TargetKind::Rgba {
        return Err(Error::InvalidArgument(
            "alpha jitter needs RGBA targets to rescale".into(),
        ));
    }
    Ok(())
}

struct Params {
    scene: Scene,
    desc_opt: Optimizer,
    mu_opt: Optimizer,
}

impl Params {
    fn new(scene: Scene, cfg: &FitConfig) -> Self {
        let n = scene.descriptors.values().len();
        Self {
            desc_opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, n),
            mu_opt: Optimizer::new(cfg.optimizer, cfg.head_learning_rate, 1),
            scene,
        }
    }
}

struct Trainer<'a> {
    cfg: &'a FitConfig,
    rng: ChaCha8Rng,
    params: Vec<Params>,
    head: HeadConfig,
    head_opt: Optimizer,
    report: FitReport,
}

struct StepPass {
    pyramid: Vec<RawImage>,
    state: ForwardState,
}

impl<'a> Trainer<'a> {
    fn new(scenes: Vec<Scene>, head: HeadConfig, cfg: &'a FitConfig) -> Self {
        let head_len = head.weights.len() + 4;
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            params: scenes.into_iter().map(|s| Params::new(s, cfg)).collect(),
            head_opt: Optimizer::new(cfg.optimizer, cfg.head_learning_rate, head_len),
            head,
            report: FitReport::default(),
        }
    }

    fn raster_opts(&self, jitter: Option<f64>) -> RasterOptions {
        RasterOptions {
            levels: self.cfg.pyramid_levels,
            max_len: self.cfg.max_ray_len,
            alpha_scale: jitter,
            force_opaque: false,
        }
    }

    fn draw_jitter(&mut self) -> Option<f64> {
        if self.cfg.use_jitter && self.rng.random::<f64>() < self.cfg.jitter_probability {
            Some(self.rng.random::<f64>())
        } else {
            None
        }
    }

    fn draw_sample(&mut self, data: &FitDataset) -> Sample {
        let view = &data.views[self.rng.random_range(0..data.views.len())];
        let window = sample_window(&view.camera, self.cfg, &mut self.rng);
        let jitter = self.draw_jitter();
        make_sample(view, data, &window, jitter)
    }

    fn forward(&self, which: usize, sample: &Sample) -> StepPass {
        let cam = padded_camera(&sample.camera, self.cfg.pyramid_levels);
        let (pyramid, state) = forward_pyramid(&self.params[which].scene, &cam, &self.raster_opts(sample.jitter));
        StepPass { pyramid, state }
    }

    /// Head, loss and head backward for a (possibly overlaid) pyramid.
    /// Returns the loss and the pyramid gradient.
    fn decode_and_score(
        &mut self,
        pyramid: &[RawImage],
        camera: &Camera,
        target: &Image,
        background: Option<&Image>,
    ) -> Result<(f64, Vec<RawImage>)> {
        let t0 = Instant::now();
        let (full, cache) = self.head.forward(pyramid)?;
        let pred = if full.width == camera.width && full.height == camera.height {
            full
        } else {
            full.crop(0, 0, camera.width, camera.height)
        };
        let target = loss_target(target, background)?;
        let loss = compute_loss(&pred, &target, self.cfg.loss_rgb, self.cfg.beta, background)?;
        let t1 = Instant::now();
        self.report.timings.loss += (t1 - t0).as_secs_f64();
        let d_full = pad_image(&loss.grad, pyramid[0].width, pyramid[0].height);
        let (d_pyr, head_grad) = self.head.backward(pyramid, &cache, &d_full);
        if self.head.is_learnable() {
            let g = head_grad.flat();
            self.head_opt.step(self.head.params_mut(), &g);
        }
        self.report.timings.backward += t1.elapsed().as_secs_f64();
        Ok((loss.value, d_pyr))
    }

    fn apply(&mut self, which: usize, pass: &StepPass, d_pyr: &[RawImage], jitter: Option<f64>) -> Result<()> {
        let t0 = Instant::now();
        let p = &mut self.params[which];
        let grad = backward_full(&p.scene, &pass.state, d_pyr)?;
        let t1 = Instant::now();
        p.desc_opt.step(p.scene.descriptors.values_mut().iter_mut(), &grad.values);
        if jitter.is_some() {
            p.mu_opt.step(std::iter::once(&mut p.scene.jitter_exponent), &[grad.mu_grad]);
            p.scene.jitter_exponent = p.scene.jitter_exponent.max(0.0);
        }
        self.report.timings.backward += (t1 - t0).as_secs_f64();
        self.report.timings.update += t1.elapsed().as_secs_f64();
        Ok(())
    }

    fn check_finite(&self, iteration: usize, loss: f64) -> Result<()> {
        let params_ok = self
            .params
            .iter()
            .all(|p| p.scene.descriptors.values().iter().all(|v| v.is_finite()) && p.scene.jitter_exponent.is_finite())
            && self.head.weights.iter().chain(&self.head.bias).all(|v| v.is_finite());
        if !loss.is_finite() || !params_ok {
            return Err(Error::Diverged { iteration, loss });
        }
        Ok(())
    }

    fn evaluate(&mut self, data: &[&FitDataset]) -> Result<()> {
        let t0 = Instant::now();
        let opts = self.raster_opts(None);
        for (p, ds) in self.params.iter().zip(data) {
            let metrics = evaluate_views(&p.scene, &self.head, ds, &opts)?;
            self.report.views.extend(metrics);
        }
        self.report.timings.evaluate += t0.elapsed().as_secs_f64();
        Ok(())
    }

    fn fail(self, error: Error) -> Box<FitFailure> {
        Box::new(FitFailure {
            error,
            scenes: self.params.into_iter().map(|p| p.scene).collect(),
            head: self.head,
            report: self.report,
        })
    }

    fn finish_report(&mut self) {
        self.report.jitter_exponents = self.params.iter().map(|p| p.scene.jitter_exponent).collect();
    }
}

/// L1 and PSNR of full renders against every view of `data`. RGBA data
/// with a background, and RGB data, are compared after background blending.
pub fn evaluate_views(scene: &Scene, head: &HeadConfig, data: &FitDataset, opts: &RasterOptions) -> Result<Vec<ViewMetrics>> {
    let opts = RasterOptions {
        alpha_scale: None,
        force_opaque: false,
        ..opts.clone()
    };
    data.validate()?;
    data.views
        .iter()
        .map(|view| {
            let pred = render(scene, &view.camera, &opts, head)?;
            let bg = data
                .background
                .as_ref()
                .map(|b| Window::full(&view.camera).background(b));
            let (pred, target) = match bg.as_ref() {
                None => (pred, view.target.clone()),
                Some(bg) => {
                    let (rgb, a) = pred.split_alpha();
                    (blend_background(&rgb, &a, bg)?, loss_target(&view.target, Some(bg))?)
                }
            };
            Ok(ViewMetrics {
                scene: scene.label.clone(),
                view: view.id.clone(),
                l1: l1_error(&pred, &target),
                psnr: psnr(&pred, &target),
            })
        })
        .collect()
}

/// Fits `scene` to `data`; see [`fit_with`].
pub fn fit(scene: Scene, data: &FitDataset, cfg: &FitConfig) -> std::result::Result<Fitted, Box<FitFailure>> {
    fit_with(scene, None, data, cfg, &mut |_| {})
}

/// Fits descriptors (and the head when learnable, and `mu` under jitter).
/// `head` defaults to the mode named in `cfg`.
pub fn fit_with(
    scene: Scene,
    head: Option<HeadConfig>,
    data: &FitDataset,
    cfg: &FitConfig,
    progress: &mut dyn FnMut(&Progress),
) -> std::result::Result<Fitted, Box<FitFailure>> {
    let head = head.unwrap_or_else(|| HeadConfig {
        threshold: cfg.head_threshold,
        ..HeadConfig::for_mode(cfg.head, scene.dim())
    });
    let checked = check_dataset(&scene, data, cfg, &head);
    let mut tr = Trainer::new(vec![scene], head, cfg);
    if let Err(e) = checked {
        return Err(tr.fail(e));
    }
    for it in 0..cfg.iterations {
        let t0 = Instant::now();
        let sample = tr.draw_sample(data);
        let t1 = Instant::now();
        let pass = tr.forward(0, &sample);
        tr.report.timings.sample += (t1 - t0).as_secs_f64();
        tr.report.timings.render += t1.elapsed().as_secs_f64();
        let step = tr
            .decode_and_score(&pass.pyramid, &sample.camera, &sample.target, sample.background.as_ref())
            .and_then(|(loss, d_pyr)| {
                tr.report.loss_curve.push(loss);
                tr.apply(0, &pass, &d_pyr, sample.jitter)?;
                tr.check_finite(it, loss)?;
                Ok(loss)
            });
        match step {
            Ok(loss) => progress(&Progress {
                iteration: it,
                loss,
                jitter: sample.jitter,
            }),
            Err(e) => return Err(tr.fail(e)),
        }
    }
    if let Err(e) = tr.evaluate(&[data]) {
        return Err(tr.fail(e));
    }
    tr.finish_report();
    let Trainer { mut params, head, report, .. } = tr;
    Ok(Fitted {
        scene: params.remove(0).scene,
        head,
        report,
    })
}

/// Fits two scenes with overlay augmentation: every step renders one sample
/// of each, places a randomly chosen one in front, and trains on the
/// overlaid raw images against the overlaid targets.
pub fn fit_pair_with_overlay(
    scene_a: Scene,
    scene_b: Scene,
    data_a: &FitDataset,
    data_b: &FitDataset,
    cfg: &FitConfig,
) -> std::result::Result<FittedPair, Box<FitFailure>> {
    fit_pair_with(scene_a, scene_b, data_a, data_b, cfg, &mut |_| {})
}

pub fn fit_pair_with(
    scene_a: Scene,
    scene_b: Scene,
    data_a: &FitDataset,
    data_b: &FitDataset,
    cfg: &FitConfig,
    progress: &mut dyn FnMut(&Progress),
) -> std::result::Result<FittedPair, Box<FitFailure>> {
    let dim = scene_a.dim();
    let head = HeadConfig {
        threshold: cfg.head_threshold,
        ..HeadConfig::for_mode(cfg.head, dim)
    };
    let checked = (|| {
        if !cfg.use_overlay {
            return Err(Error::InvalidArgument("overlay fitting requires use_overlay = true".into()));
        }
        if scene_b.dim() != dim {
            return Err(Error::ShapeMismatch("scenes have different descriptor widths".into()));
        }
        check_dataset(&scene_a, data_a, cfg, &head)?;
        check_dataset(&scene_b, data_b, cfg, &head)?;
        if data_a.target_kind != TargetKind::Rgba || data_b.target_kind != TargetKind::Rgba {
            return Err(Error::InvalidArgument("overlay needs RGBA targets".into()));
        }
        Ok(())
    })();
    let mut tr = Trainer::new(vec![scene_a, scene_b], head, cfg);
    if let Err(e) = checked {
        return Err(tr.fail(e));
    }
    let datasets = [data_a, data_b];
    for it in 0..cfg.iterations {
        let t0 = Instant::now();
        let samples = [tr.draw_sample(data_a), tr.draw_sample(data_b)];
        let front = if tr.rng.random::<bool>() { 0 } else { 1 };
        let back = 1 - front;
        let t1 = Instant::now();
        tr.report.timings.sample += (t1 - t0).as_secs_f64();
        let step = (|| -> Result<f64> {
            let (sf, sb) = (&samples[front], &samples[back]);
            if sf.camera.width != sb.camera.width || sf.camera.height != sb.camera.height {
                return Err(Error::ShapeMismatch(format!(
                    "overlay samples differ in size: {}x{} vs {}x{}",
                    sf.camera.width, sf.camera.height, sb.camera.width, sb.camera.height
                )));
            }
            let pf = tr.forward(front, sf);
            let pb = tr.forward(back, sb);
            let overlaid = pf
                .pyramid
                .iter()
                .zip(&pb.pyramid)
                .map(|(f, b)| overlay_raw(f, b))
                .collect::<Result<Vec<_>>>()?;
            let target = overlay_targets(&sf.target, &sb.target)?;
            tr.report.timings.render += t1.elapsed().as_secs_f64();
            let (loss, d_pyr) = tr.decode_and_score(&overlaid, &sf.camera, &target, sf.background.as_ref())?;
            tr.report.loss_curve.push(loss);
            let (mut d_front, mut d_back) = (Vec::new(), Vec::new());
            for ((f, b), d) in pf.pyramid.iter().zip(&pb.pyramid).zip(&d_pyr) {
                let (df, db) = overlay_raw_backward(f, b, d);
                d_front.push(df);
                d_back.push(db);
            }
            tr.apply(front, &pf, &d_front, sf.jitter)?;
            tr.apply(back, &pb, &d_back, sb.jitter)?;
            tr.check_finite(it, loss)?;
            Ok(loss)
        })();
        match step {
            Ok(loss) => progress(&Progress {
                iteration: it,
                loss,
                jitter: None,
            }),
            Err(e) => return Err(tr.fail(e)),
        }
    }
    if let Err(e) = tr.evaluate(&datasets) {
        return Err(tr.fail(e));
    }
    tr.finish_report();
    let Trainer { params, head, report, .. } = tr;
    let mut it = params.into_iter();
    Ok(FittedPair {
        front: it.next().expect("two scenes").scene,
        back: it.next().expect("two scenes").scene,
        head,
        report,
    })
}

/// Loss of the current scene on one fixed sample, without updating anything.
pub fn sample_loss(scene: &Scene, head: &HeadConfig, sample: &Sample, cfg: &FitConfig) -> Result<f64> {
    let opts = RasterOptions {
        levels: cfg.pyramid_levels,
        max_len: cfg.max_ray_len,
        alpha_scale: sample.jitter,
        force_opaque: false,
    };
    let pred = render(scene, &sample.camera, &opts, head)?;
    let target = loss_target(&sample.target, sample.background.as_ref())?;
    Ok(compute_loss(&pred, &target, cfg.loss_rgb, cfg.beta, sample.background.as_ref())?.value)
}

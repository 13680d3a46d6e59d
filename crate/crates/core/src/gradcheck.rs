//! Finite-difference check of the analytic descriptor and `mu` gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::composite::RawImage;
use crate::error::Result;
use crate::grad::{backward_full, DescriptorGrad};
use crate::head::HeadConfig;
use crate::image::Image;
use crate::loss::{compute_loss, PixelLoss};
use crate::raster::{forward_pyramid, RasterOptions};
use crate::render::{render_backward, render_forward};
use crate::scene::{Camera, DescriptorSet, PointCloud, Scene};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_TOLERANCE: f64 = 1e-7;
/// Partials below this magnitude are judged by absolute error.
pub const SMALL_GRADIENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub configs: usize,
    pub max_points: usize,
    pub max_canvas: usize,
    pub max_ray_len: usize,
    /// Debug hook: corrupts the analytic gradient so the checker must fail.
    pub tamper: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            configs: 200,
            max_points: 20,
            max_canvas: 16,
            max_ray_len: 8,
            tamper: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradcheckReport {
    pub configs: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error_small: f64,
    pub failures: usize,
    pub empty_rays: usize,
    pub truncated_rays: usize,
    pub saturated_points: usize,
    pub jitter_configs: usize,
    pub head_configs: usize,
    pub worst: Option<String>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.configs > 0
    }
}

/// Loss applied to the raw pyramid (or decoded image) in one configuration.
enum Objective {
    /// sum over levels and values of `a*s + b*s^2/2`
    Quadratic { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// Linear head, L2 loss with alpha term against a fixed target.
    Head { head: HeadConfig, target: Image, beta: f64 },
}

struct Config {
    scene: Scene,
    camera: Camera,
    opts: RasterOptions,
    objective: Objective,
}

fn flat(img: &RawImage) -> impl Iterator<Item = &f64> {
    img.features.iter().chain(&img.alpha)
}

impl Config {
    fn loss(&self, scene: &Scene) -> Result<f64> {
        match &self.objective {
            Objective::Quadratic { a, b } => {
                let (pyr, _) = forward_pyramid(scene, &self.camera, &self.opts);
                Ok(pyr
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(img, (a, b))| {
                        flat(img)
                            .zip(a.iter().zip(b))
                            .map(|(s, (a, b))| a * s + 0.5 * b * s * s)
                            .sum::<f64>()
                    })
                    .sum())
            }
            Objective::Head { head, target, beta } => {
                let pass = render_forward(scene, &self.camera, &self.opts, head)?;
                Ok(compute_loss(&pass.rgba, target, PixelLoss::L2, *beta, None)?.value)
            }
        }
    }

    fn analytic(&self) -> Result<DescriptorGrad> {
        match &self.objective {
            Objective::Quadratic { a, b } => {
                let (pyr, state) = forward_pyramid(&self.scene, &self.camera, &self.opts);
                let grads: Vec<RawImage> = pyr
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(img, (a, b))| {
                        let mut g = RawImage::zeros(img.width, img.height, img.color_dim);
                        let nf = img.features.len();
                        for (k, s) in flat(img).enumerate() {
                            let v = a[k] + b[k] * s;
                            if k < nf {
                                g.features[k] = v;
                            } else {
                                g.alpha[k - nf] = v;
                            }
                        }
                        g
                    })
                    .collect();
                backward_full(&self.scene, &state, &grads)
            }
            Objective::Head { head, target, beta } => {
                let pass = render_forward(&self.scene, &self.camera, &self.opts, head)?;
                let loss = compute_loss(&pass.rgba, target, PixelLoss::L2, *beta, None)?;
                Ok(render_backward(&self.scene, &pass, head, &loss.grad)?.0)
            }
        }
    }
}

fn random_raw<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => -rng.random_range(0.01..1.0),
        1 => rng.random_range(3.0..6.0),
        _ => rng.random_range(0.01..1.5),
    }
}

fn random_config<R: Rng>(rng: &mut R, o: &GradcheckOptions, index: usize) -> Config {
    let n = rng.random_range(0..=o.max_points);
    let levels = rng.random_range(0..=2u32);
    let step = 4usize;
    let w = step * rng.random_range(1..=o.max_canvas / step);
    let h = step * rng.random_range(1..=o.max_canvas / step);
    let dim = rng.random_range(2..=8);
    let max_len = rng.random_range(1..=o.max_ray_len);
    let focal = rng.random_range(0.5..1.5) * w.max(h) as f64;
    let camera = Camera::simple(focal, w, h);

    // Every other configuration packs points into a few pixels so rays overflow L.
    let clustered = index % 2 == 1;
    let anchors: Vec<[f64; 2]> = (0..3)
        .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)])
        .collect();
    let points = (0..n)
        .map(|_| {
            let z = rng.random_range(0.5..3.0);
            let (x, y) = if clustered {
                let a = anchors[rng.random_range(0..anchors.len())];
                (a[0] * z, a[1] * z)
            } else {
                (rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z)
            };
            [x, y, z]
        })
        .collect();
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        values.extend((0..dim - 1).map(|_| rng.random_range(-1.0..1.0)));
        values.push(random_raw(rng));
    }
    let mut scene = Scene::new(
        PointCloud::new(points).expect("finite points"),
        DescriptorSet::new(dim, values).expect("valid width"),
        format!("gradcheck-{index}"),
    )
    .expect("consistent scene");
    let jitter = rng.random_bool(0.5);
    if jitter {
        scene.jitter_exponent = rng.random_range(0.2..2.5);
    }
    let opts = RasterOptions {
        levels,
        max_len,
        alpha_scale: jitter.then(|| rng.random_range(0.05..=1.0)),
        force_opaque: false,
    };

    let objective = if index % 4 == 3 {
        let mut head = HeadConfig::linear(dim);
        for v in head.weights.iter_mut().chain(head.bias.iter_mut()) {
            *v += rng.random_range(-0.5..0.5);
        }
        let target = Image::from_data(w, h, 4, (0..w * h * 4).map(|_| rng.random::<f64>()).collect())
            .expect("sized target");
        Objective::Head {
            head,
            target,
            beta: rng.random_range(0.0..2.0),
        }
    } else {
        let (a, b) = (0..=levels)
            .map(|t| {
                let count = (w >> t) * (h >> t) * dim;
                let a = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
                (a, b)
            })
            .unzip();
        Objective::Quadratic { a, b }
    };
    Config {
        scene,
        camera,
        opts,
        objective,
    }
}

/// Runs the check over `opts.configs` random configurations.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    for index in 0..opts.configs {
        let cfg = random_config(&mut rng, opts, index);
        check_config(&cfg, opts.tamper, index, &mut report)?;
        report.configs += 1;
    }
    Ok(report)
}

fn check_config(cfg: &Config, tamper: bool, index: usize, report: &mut GradcheckReport) -> Result<()> {
    let (_, state) = forward_pyramid(&cfg.scene, &cfg.camera, &cfg.opts);
    for rays in &state.rays {
        report.empty_rays += rays.lengths.iter().filter(|&&l| l == 0).count();
    }
    // A ray is truncated when more points land on its pixel than it holds.
    let (_, full) = forward_pyramid(
        &cfg.scene,
        &cfg.camera,
        &RasterOptions {
            max_len: cfg.scene.len().max(1),
            ..cfg.opts.clone()
        },
    );
    for (kept, all) in state.rays.iter().zip(&full.rays) {
        report.truncated_rays += kept.lengths.iter().zip(&all.lengths).filter(|(k, a)| k < a).count();
    }
    report.saturated_points += (0..cfg.scene.len())
        .filter(|&i| cfg.scene.descriptors.raw_alpha(i) >= 3.0)
        .count();
    report.jitter_configs += cfg.opts.alpha_scale.is_some() as usize;
    report.head_configs += matches!(cfg.objective, Objective::Head { .. }) as usize;

    let mut grad = cfg.analytic()?;
    if tamper {
        for v in &mut grad.values {
            *v *= 1.01;
        }
        grad.mu_grad = grad.mu_grad * 1.01 + 1e-3;
    }
    let mut probe = cfg.scene.clone();
    let compare = |name: String, analytic: f64, numeric: f64, report: &mut GradcheckReport| {
        report.entries += 1;
        let scale = analytic.abs().max(numeric.abs());
        let abs = (analytic - numeric).abs();
        let ok = if scale >= SMALL_GRADIENT {
            let rel = abs / scale;
            report.max_rel_error = report.max_rel_error.max(rel);
            rel < REL_TOLERANCE
        } else {
            report.max_abs_error_small = report.max_abs_error_small.max(abs);
            abs < ABS_TOLERANCE
        };
        if !ok {
            report.failures += 1;
            if report.worst.is_none() {
                report.worst = Some(format!("config {index}, {name}: analytic {analytic:e}, numeric {numeric:e}"));
            }
        }
    };
    for k in 0..probe.descriptors.values().len() {
        let x = probe.descriptors.values()[k];
        probe.descriptors.values_mut()[k] = x + FD_STEP;
        let up = cfg.loss(&probe)?;
        probe.descriptors.values_mut()[k] = x - FD_STEP;
        let down = cfg.loss(&probe)?;
        probe.descriptors.values_mut()[k] = x;
        let dim = probe.dim();
        compare(
            format!("point {} channel {}", k / dim, k % dim),
            grad.values[k],
            (up - down) / (2.0 * FD_STEP),
            report,
        );
    }
    if cfg.opts.alpha_scale.is_some() {
        let mu = probe.jitter_exponent;
        probe.jitter_exponent = mu + FD_STEP;
        let up = cfg.loss(&probe)?;
        probe.jitter_exponent = mu - FD_STEP;
        let down = cfg.loss(&probe)?;
        probe.jitter_exponent = mu;
        compare("mu".into(), grad.mu_grad, (up - down) / (2.0 * FD_STEP), report);
    }
    Ok(())
}

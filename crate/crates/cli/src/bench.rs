use std::time::Instant;

use clap::Args;
use pointray::projection::project;
use pointray::raster::{composite_rays, point_alphas, Buckets};
use pointray::{Camera, DescriptorSet, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::common::{CliError, Output};

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 400_000)]
    points: usize,
    /// Square canvas side.
    #[arg(long, default_value_t = 512)]
    canvas: usize,
    #[arg(long, default_value_t = 50)]
    ray_len: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Median seconds per phase.
#[derive(Debug, Serialize)]
pub struct BenchTimings {
    pub points: usize,
    pub canvas: usize,
    pub ray_len: usize,
    pub repeats: usize,
    pub project: f64,
    pub group: f64,
    pub sort: f64,
    pub blend: f64,
    pub total: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn run(args: BenchArgs, out: &Output) -> Result<(), CliError> {
    if args.repeats == 0 || args.canvas == 0 || args.ray_len == 0 || args.dim < 2 {
        return Err(CliError::Usage("repeats, canvas and ray length must be positive, dim at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pts = (0..args.points)
        .map(|_| {
            let z = rng.random_range(2.0..6.0);
            [rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z]
        })
        .collect();
    let cloud = PointCloud::new(pts).map_err(CliError::at("generate points"))?;
    let desc = DescriptorSet::random(args.points, args.dim, &mut rng);
    let (_, alphas) = point_alphas(&desc, 1.0, false);
    let cam = Camera::simple(args.canvas as f64, args.canvas, args.canvas);

    let mut phases: [Vec<f64>; 5] = Default::default();
    for _ in 0..args.repeats {
        let t0 = Instant::now();
        let proj = project(&cloud, &cam);
        let t1 = Instant::now();
        let buckets = Buckets::build(&proj, cam.width, cam.height);
        let t2 = Instant::now();
        let rays = buckets.into_ray_buffer(args.ray_len);
        let t3 = Instant::now();
        let img = composite_rays(&rays, &desc, &alphas);
        let t4 = Instant::now();
        std::hint::black_box(img);
        for (k, (a, b)) in [(t0, t1), (t1, t2), (t2, t3), (t3, t4), (t0, t4)].into_iter().enumerate() {
            phases[k].push((b - a).as_secs_f64());
        }
    }
    let [p, g, s, b, t] = phases.map(median);
    let timings = BenchTimings {
        points: args.points,
        canvas: args.canvas,
        ray_len: args.ray_len,
        repeats: args.repeats,
        project: p,
        group: g,
        sort: s,
        blend: b,
        total: t,
    };
    out.event("bench", &timings);
    out.text(format_args!(
        "{} points, {c}x{c}, L={}: project {:.1} ms, group {:.1} ms, sort {:.1} ms, blend {:.1} ms, total {:.1} ms (median of {})",
        timings.points,
        timings.ray_len,
        p * 1e3,
        g * 1e3,
        s * 1e3,
        b * 1e3,
        t * 1e3,
        timings.repeats,
        c = timings.canvas,
    ));
    Ok(())
}

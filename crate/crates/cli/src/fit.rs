use std::path::{Path, PathBuf};

use clap::Args;
use pointray::fit::{evaluate_views, fit_pair_with, fit_with, FitFailure, FitReport, Progress, ViewMetrics};
use pointray::io::{load_dataset, save_descriptors, save_manifest, save_point_cloud, ManifestEntry, SceneManifest};
use pointray::scene::DEFAULT_DESCRIPTOR_DIM;
use pointray::{FitConfig, HeadConfig, RasterOptions, Scene};
use serde::Serialize;

use crate::common::{create_dir, load_fit_scene, CliError, Output};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Scene to fit (manifest, scene directory, or `.ply`); give two with `use_overlay`.
    #[arg(long = "scene", required = true, num_args = 1)]
    scenes: Vec<PathBuf>,
    /// Dataset directory per scene (`cameras.txt` plus `<id>.png`).
    #[arg(long = "data", required = true, num_args = 1)]
    data: Vec<PathBuf>,
    /// Fit configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Held-out dataset evaluated after fitting (first scene).
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Descriptor width for scenes without descriptors.
    #[arg(long, default_value_t = DEFAULT_DESCRIPTOR_DIM)]
    descriptor_dim: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    head_learning_rate: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_ray_len: Option<usize>,
    #[arg(long)]
    pyramid_levels: Option<u32>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Emit a progress line every N iterations.
    #[arg(long, default_value_t = 100)]
    progress_every: usize,
}

#[derive(Serialize)]
struct SavedReport<'a> {
    #[serde(flatten)]
    report: &'a FitReport,
    heldout: Vec<ViewMetrics>,
    status: &'a str,
    error: Option<String>,
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig, CliError> {
        let mut cfg = FitConfig::load(&self.config).map_err(CliError::at("load config"))?;
        let flags: [(&str, Option<String>); 7] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("head_learning_rate", self.head_learning_rate.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("max_ray_len", self.max_ray_len.map(|v| v.to_string())),
            ("pyramid_levels", self.pyramid_levels.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(CliError::Usage)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn write_scene(scene: &Scene, dir: &Path, prefix: &str) -> Result<ManifestEntry, CliError> {
    let stage = "write outputs";
    let cloud = format!("{prefix}cloud.ply");
    let desc = format!("{prefix}descriptors.bin");
    save_point_cloud(&scene.cloud, dir.join(&cloud), true).map_err(CliError::at(stage))?;
    if !scene.is_empty() {
        save_descriptors(&scene.descriptors, dir.join(&desc)).map_err(CliError::at(stage))?;
    }
    let mut entry = ManifestEntry::new(cloud, (!scene.is_empty()).then(|| desc.into()));
    entry.jitter_exponent = scene.jitter_exponent;
    entry.label = scene.label.clone();
    Ok(entry)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data {
        stage: "write outputs",
        error: pointray::Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn save_outputs(
    dir: &Path,
    scenes: &[Scene],
    head: &HeadConfig,
    cfg: &FitConfig,
    report: &SavedReport,
) -> Result<(), CliError> {
    let prefixes: Vec<String> = if scenes.len() == 1 {
        vec![String::new()]
    } else {
        (0..scenes.len()).map(|i| format!("scene{i}_")).collect()
    };
    let mut entries = Vec::new();
    for (s, p) in scenes.iter().zip(&prefixes) {
        entries.push(write_scene(s, dir, p)?);
    }
    let mut manifest = SceneManifest::new(entries);
    manifest.descriptor_dim = scenes.first().map_or(DEFAULT_DESCRIPTOR_DIM, |s| s.dim());
    save_manifest(&manifest, dir.join("scene.json")).map_err(CliError::at("write outputs"))?;
    write_json(head, &dir.join("head.json"))?;
    cfg.save(&dir.join("config.txt")).map_err(CliError::at("write outputs"))?;
    write_json(report, &dir.join("report.json"))
}

pub fn run(args: FitArgs, out: &Output) -> Result<(), CliError> {
    let cfg = args.config()?;
    if args.scenes.len() != args.data.len() {
        return Err(CliError::Usage("give one --data directory per --scene".into()));
    }
    if args.scenes.len() > 2 || (args.scenes.len() == 2) != cfg.use_overlay {
        return Err(CliError::Usage("two scenes are fitted together exactly when use_overlay = true".into()));
    }
    let data = args
        .data
        .iter()
        .map(|d| load_dataset(d).map_err(CliError::at("load dataset")))
        .collect::<Result<Vec<_>, _>>()?;
    let scenes = args
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| load_fit_scene(s, cfg.seed.wrapping_add(i as u64), args.descriptor_dim))
        .collect::<Result<Vec<_>, _>>()?;
    let heldout = args
        .heldout
        .as_ref()
        .map(|d| load_dataset(d).map_err(CliError::at("load held-out dataset")))
        .transpose()?;
    create_dir(&args.out)?;

    let every = args.progress_every.max(1);
    let mut progress = |p: &Progress| {
        if p.iteration % every == 0 || p.iteration + 1 == cfg.iterations {
            out.event("progress", p);
            out.text(format_args!("iteration {:>6}  loss {:.6e}", p.iteration, p.loss));
        }
    };
    let result = if scenes.len() == 2 {
        let mut it = scenes.into_iter();
        let (a, b) = (it.next().unwrap(), it.next().unwrap());
        fit_pair_with(a, b, &data[0], &data[1], &cfg, &mut progress).map(|f| (vec![f.front, f.back], f.head, f.report))
    } else {
        let scene = scenes.into_iter().next().expect("one scene");
        fit_with(scene, None, &data[0], &cfg, &mut progress).map(|f| (vec![f.scene], f.head, f.report))
    };

    match result {
        Ok((scenes, head, report)) => {
            let held = match &heldout {
                Some(h) => evaluate_views(
                    &scenes[0],
                    &head,
                    h,
                    &RasterOptions::new(cfg.pyramid_levels, cfg.max_ray_len),
                )
                .map_err(CliError::at("evaluate held-out views"))?,
                None => Vec::new(),
            };
            let saved = SavedReport {
                report: &report,
                heldout: held,
                status: "ok",
                error: None,
            };
            save_outputs(&args.out, &scenes, &head, &cfg, &saved)?;
            let mean = |v: &[ViewMetrics]| v.iter().map(|m| m.psnr).sum::<f64>() / v.len().max(1) as f64;
            out.event(
                "done",
                &serde_json::json!({
                    "iterations": report.loss_curve.len(),
                    "final_loss": report.loss_curve.last(),
                    "train_psnr": mean(&report.views),
                    "heldout_psnr": (!saved.heldout.is_empty()).then(|| mean(&saved.heldout)),
                    "out": args.out,
                }),
            );
            out.text(format_args!(
                "fitted {} iterations; mean training PSNR {:.2} dB{}; outputs in {}",
                report.loss_curve.len(),
                mean(&report.views),
                if saved.heldout.is_empty() {
                    String::new()
                } else {
                    format!(", held-out {:.2} dB", mean(&saved.heldout))
                },
                args.out.display()
            ));
            Ok(())
        }
        Err(failure) => {
            let FitFailure { error, report, .. } = *failure;
            let saved = SavedReport {
                report: &report,
                heldout: Vec::new(),
                status: "failed",
                error: Some(error.to_string()),
            };
            write_json(&saved, &args.out.join("report.json"))?;
            Err(CliError::at("fit")(error))
        }
    }
}

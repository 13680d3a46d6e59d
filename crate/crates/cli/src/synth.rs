use std::path::PathBuf;

use clap::Args;
use pointray::io::{save_dataset, save_descriptors, save_manifest, save_point_cloud, ManifestEntry, SceneManifest};
use pointray::synthetic::{self_reconstruction_set, TwoLayerSpec};

use crate::common::{create_dir, CliError, Output};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    train_views: usize,
    #[arg(long, default_value_t = 5)]
    heldout_views: usize,
    #[arg(long, default_value_t = 300)]
    back_points: usize,
    #[arg(long, default_value_t = 200)]
    front_points: usize,
    #[arg(long, default_value_t = 64)]
    canvas: usize,
}

/// Writes `train/`, `heldout/`, `cloud.ply`, `scene.json` (random
/// descriptors) and `truth/scene.json` (ground-truth descriptors).
pub fn run(args: SynthArgs, out: &Output) -> Result<(), CliError> {
    if args.canvas == 0 || args.train_views == 0 || args.heldout_views == 0 {
        return Err(CliError::Usage("canvas and view counts must be positive".into()));
    }
    let spec = TwoLayerSpec {
        back_points: args.back_points,
        front_points: args.front_points,
        train_views: args.train_views,
        heldout_views: args.heldout_views,
        focal: 60.0 * args.canvas as f64 / 64.0,
        canvas: args.canvas,
        ..TwoLayerSpec::default()
    };
    let stage = "write synthetic data";
    let set = self_reconstruction_set(&spec, args.seed).map_err(CliError::at(stage))?;
    let truth_dir = args.out.join("truth");
    create_dir(&truth_dir)?;
    save_dataset(&set.train, args.out.join("train")).map_err(CliError::at(stage))?;
    save_dataset(&set.heldout, args.out.join("heldout")).map_err(CliError::at(stage))?;
    save_point_cloud(&set.truth.cloud, args.out.join("cloud.ply"), false).map_err(CliError::at(stage))?;
    let mut init = SceneManifest::new(vec![ManifestEntry::new("cloud.ply", None)]);
    init.descriptor_dim = spec.descriptor_dim;
    save_manifest(&init, args.out.join("scene.json")).map_err(CliError::at(stage))?;
    save_descriptors(&set.truth.descriptors, truth_dir.join("descriptors.bin")).map_err(CliError::at(stage))?;
    let truth = SceneManifest::new(vec![ManifestEntry::new("../cloud.ply", Some("descriptors.bin".into()))]);
    save_manifest(&truth, truth_dir.join("scene.json")).map_err(CliError::at(stage))?;
    out.event(
        "synth",
        &serde_json::json!({ "out": args.out, "points": set.truth.len(), "train": spec.train_views, "heldout": spec.heldout_views }),
    );
    out.text(format_args!(
        "wrote {} points, {} training and {} held-out views to {}",
        set.truth.len(),
        spec.train_views,
        spec.heldout_views,
        args.out.display()
    ));
    Ok(())
}

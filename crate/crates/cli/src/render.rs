use std::path::{Path, PathBuf};

use clap::Args;
use pointray::composite::blend_background;
use pointray::io::dataset::parse_solid;
use pointray::io::{load_cameras, load_image, save_image, save_render, NamedCamera};
use pointray::render::{render_forward, RenderPass};
use pointray::{Camera, HeadConfig, Image, RasterOptions, Scene};
use serde::Serialize;

use crate::common::{create_dir, load_scene, scene_manifest, CliError, Output};

#[derive(Debug, Args)]
pub struct RenderFlags {
    /// Cameras file (`cameras 1` text format).
    #[arg(long)]
    cameras: PathBuf,
    /// Output directory; one `<id>.png` per camera.
    #[arg(long)]
    out: PathBuf,
    /// Maximum ray length L.
    #[arg(long, default_value_t = pointray::raster::DEFAULT_MAX_RAY_LEN)]
    ray_len: usize,
    /// Pyramid levels T.
    #[arg(long, default_value_t = 4)]
    levels: u32,
    /// Background PNG (same size as every camera) or `r,g,b` in [0, 1];
    /// produces RGB output.
    #[arg(long)]
    background: Option<String>,
    /// Alpha factor p; activated alphas are multiplied by p^mu.
    #[arg(long)]
    alpha_scale: Option<f64>,
    /// Head parameters (`head.json` from a fit); default passthrough.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Debug: treat every point as opaque (hard z-buffer).
    #[arg(long)]
    force_opaque: bool,
    /// Also write `<id>.levels.json` with every level's accumulated alpha.
    #[arg(long)]
    raw_levels: bool,
    /// Seed for descriptors of entries that have none.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene manifest, fit output directory, or `.ply`.
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    flags: RenderFlags,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Manifest listing the scenes to compose.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    flags: RenderFlags,
}

#[derive(Serialize)]
struct Level {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

#[derive(Serialize)]
struct RenderedView<'a> {
    view: &'a str,
    path: PathBuf,
    coverage: f64,
}

enum Backdrop {
    Solid([f64; 3]),
    Image(Image),
}

fn parse_background(arg: &str) -> Result<Backdrop, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        let img = load_image(path).map_err(CliError::at("load background"))?;
        if img.channels != 3 {
            return Err(CliError::Usage("background image must be RGB".into()));
        }
        return Ok(Backdrop::Image(img));
    }
    parse_solid(arg)
        .map(Backdrop::Solid)
        .map_err(|_| CliError::Usage(format!("--background `{arg}` is neither a file nor `r,g,b`")))
}

fn load_head(path: Option<&Path>) -> Result<HeadConfig, CliError> {
    let Some(path) = path else {
        return Ok(HeadConfig::passthrough());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data {
        stage: "load head",
        error: pointray::Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Data {
        stage: "load head",
        error: pointray::Error::InvalidArgument(format!("{}: {e}", path.display())),
    })
}

fn finish(pass: RenderPass, camera: &Camera, backdrop: Option<&Backdrop>) -> Result<Image, CliError> {
    let Some(b) = backdrop else {
        return Ok(pass.rgba);
    };
    let bg = match b {
        Backdrop::Solid(c) => Image::filled(camera.width, camera.height, c),
        Backdrop::Image(img) => img.clone(),
    };
    let (rgb, a) = pass.rgba.split_alpha();
    blend_background(&rgb, &a, &bg).map_err(CliError::at("blend background"))
}

pub fn render_scene(scene: &Scene, f: &RenderFlags, out: &Output) -> Result<(), CliError> {
    if let Some(p) = f.alpha_scale {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!("--alpha-scale {p} outside [0, 1]")));
        }
    }
    let cams = load_cameras(&f.cameras).map_err(CliError::at("load cameras"))?;
    let head = load_head(f.head.as_deref())?;
    let backdrop = f.background.as_deref().map(parse_background).transpose()?;
    create_dir(&f.out)?;
    let opts = RasterOptions {
        levels: f.levels,
        max_len: f.ray_len,
        alpha_scale: f.alpha_scale,
        force_opaque: f.force_opaque,
    };
    for NamedCamera { id, camera } in &cams {
        let pass = render_forward(scene, camera, &opts, &head).map_err(CliError::at("render"))?;
        if f.raw_levels {
            let levels: Vec<Level> = pass
                .pyramid
                .iter()
                .map(|l| Level {
                    width: l.width,
                    height: l.height,
                    alpha: l.alpha.clone(),
                })
                .collect();
            let path = f.out.join(format!("{id}.levels.json"));
            std::fs::write(&path, serde_json::to_string(&levels).expect("serializable")).map_err(|e| {
                CliError::Data {
                    stage: "write outputs",
                    error: pointray::Error::Io { path: path.clone(), source: e },
                }
            })?;
        }
        let coverage = pass.rgba.data.chunks(4).filter(|p| p[3] > 0.0).count() as f64
            / (camera.width * camera.height) as f64;
        let img = finish(pass, camera, backdrop.as_ref())?;
        let path = f.out.join(format!("{id}.png"));
        if img.channels == 4 {
            save_render(&img, &path)
        } else {
            save_image(&img, &path)
        }
        .map_err(CliError::at("write outputs"))?;
        out.event(
            "rendered",
            &RenderedView {
                view: id,
                path: path.clone(),
                coverage,
            },
        );
    }
    out.text(format_args!(
        "rendered {} views of {} points to {}",
        cams.len(),
        scene.len(),
        f.out.display()
    ));
    Ok(())
}

pub fn run_render(args: RenderArgs, out: &Output) -> Result<(), CliError> {
    let scene = load_scene(&args.scene, args.flags.seed)?;
    render_scene(&scene, &args.flags, out)
}

pub fn run_compose(args: ComposeArgs, out: &Output) -> Result<(), CliError> {
    let (manifest, _) = scene_manifest(&args.manifest)?;
    let scene = load_scene(&args.manifest, args.flags.seed)?;
    out.text(format_args!(
        "composed {} scenes into {} points",
        manifest.scenes.len(),
        scene.len()
    ));
    render_scene(&scene, &args.flags, out)
}

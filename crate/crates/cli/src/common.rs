use std::fmt;
use std::path::{Path, PathBuf};

use pointray::io::{compose_scenes, load_manifest, ManifestEntry, SceneManifest};
use pointray::{Error, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data { stage: &'static str, error: Error },
    Numerical { stage: &'static str, message: String },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Numerical { .. } => EXIT_NUMERICAL,
        }
    }

    /// Classifies a library error raised during `stage`.
    pub fn at(stage: &'static str) -> impl Fn(Error) -> CliError {
        move |error| match error {
            Error::Diverged { .. } => CliError::Numerical {
                stage,
                message: error.to_string(),
            },
            error => CliError::Data { stage, error },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error [usage]: {m}"),
            CliError::Data { stage, error } => write!(f, "error [{stage}]: {error}"),
            CliError::Numerical { stage, message } => write!(f, "error [{stage}]: {message}"),
        }
    }
}

/// Text or JSON-lines reporting.
pub struct Output {
    pub json: bool,
}

impl Output {
    pub fn event<T: Serialize>(&self, event: &str, body: &T) {
        if self.json {
            let mut v = serde_json::to_value(body).expect("serializable event");
            if let serde_json::Value::Object(m) = &mut v {
                m.insert("event".into(), event.into());
            }
            println!("{v}");
        }
    }

    pub fn text(&self, line: impl fmt::Display) {
        if !self.json {
            println!("{line}");
        }
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data {
        stage: "create output directory",
        error: Error::Io {
            path: dir.to_path_buf(),
            source: e,
        },
    })
}

/// A scene argument: a manifest (`.json`), a directory holding `scene.json`,
/// or a bare `.ply` cloud whose descriptors are initialized randomly.
pub fn scene_manifest(path: &Path) -> Result<(SceneManifest, PathBuf), CliError> {
    let stage = "load scene";
    let (manifest_path, is_ply) = if path.is_dir() {
        (path.join("scene.json"), false)
    } else {
        (path.to_path_buf(), path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")))
    };
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    if is_ply {
        let name = path.file_name().map(PathBuf::from).unwrap_or_default();
        return Ok((SceneManifest::new(vec![ManifestEntry::new(name, None)]), base));
    }
    let manifest = load_manifest(&manifest_path).map_err(CliError::at(stage))?;
    Ok((manifest, base))
}

pub fn load_scene(path: &Path, seed: u64) -> Result<Scene, CliError> {
    let (manifest, base) = scene_manifest(path)?;
    compose_scenes(&manifest, &base, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(CliError::at("load scene"))
}

/// A single scene for fitting: the one manifest entry, untransformed alphas.
pub fn load_fit_scene(path: &Path, seed: u64, dim: usize) -> Result<Scene, CliError> {
    let (mut manifest, base) = scene_manifest(path)?;
    if manifest.scenes.len() != 1 {
        return Err(CliError::Usage(format!(
            "{}: fitting needs a single-entry scene, found {} entries",
            path.display(),
            manifest.scenes.len()
        )));
    }
    let entry = &mut manifest.scenes[0];
    if entry.descriptors.is_none() {
        manifest.descriptor_dim = dim;
    }
    let mu = entry.jitter_exponent;
    entry.alpha_scale = 1.0;
    let mut scene = compose_scenes(&manifest, &base, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(CliError::at("load scene"))?;
    scene.jitter_exponent = mu;
    if scene.label.is_empty() {
        scene.label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
    }
    Ok(scene)
}

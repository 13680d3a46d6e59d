//! JSON scene manifests and scene composition.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::composite::activate_alpha;
use crate::error::{Error, FormatError, Result};
use crate::io::{descriptors::load_descriptors, ply::load_point_cloud};
use crate::scene::{orthonormality_error, DescriptorSet, PointCloud, Scene, DEFAULT_DESCRIPTOR_DIM};

pub const MANIFEST_VERSION: u64 = 1;
pub const RIGID_TOLERANCE: f64 = 1e-5;
/// Upper clamp on a manipulated alpha before inverting the activation.
pub const ALPHA_CLAMP: f64 = 1.0 - 1e-6;

pub const IDENTITY4: [f64; 16] = [
    1.0, 0.0, 0.0, 0.0, //
    0.0, 1.0, 0.0, 0.0, //
    0.0, 0.0, 1.0, 0.0, //
    0.0, 0.0, 0.0, 1.0,
];

fn identity4() -> [f64; 16] {
    IDENTITY4
}

fn one() -> f64 {
    1.0
}

fn default_dim() -> usize {
    DEFAULT_DESCRIPTOR_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub cloud: PathBuf,
    /// Absent means fresh random descriptors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<PathBuf>,
    /// Row-major 4x4 world transform applied to the cloud.
    #[serde(default = "identity4")]
    pub transform: [f64; 16],
    /// Alpha factor `p`; activated alphas become `alpha * p^mu`.
    #[serde(default = "one")]
    pub alpha_scale: f64,
    /// Jitter exponent `mu` learned for this entry.
    #[serde(default = "one")]
    pub jitter_exponent: f64,
    #[serde(default)]
    pub label: String,
}

impl ManifestEntry {
    pub fn new(cloud: impl Into<PathBuf>, descriptors: Option<PathBuf>) -> Self {
        Self {
            cloud: cloud.into(),
            descriptors,
            transform: IDENTITY4,
            alpha_scale: 1.0,
            jitter_exponent: 1.0,
            label: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u64,
    /// Width used when an entry has no descriptor file.
    #[serde(default = "default_dim")]
    pub descriptor_dim: usize,
    pub scenes: Vec<ManifestEntry>,
}

impl SceneManifest {
    pub fn new(scenes: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            descriptor_dim: DEFAULT_DESCRIPTOR_DIM,
            scenes,
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.version != MANIFEST_VERSION {
            return Err(FormatError::UnsupportedVersion(self.version));
        }
        for (i, e) in self.scenes.iter().enumerate() {
            let bad = |message: String| FormatError::Syntax { line: i + 1, message };
            rigid_parts(&e.transform).map_err(|m| bad(format!("entry {i}: {m}")))?;
            if !(0.0..=1.0).contains(&e.alpha_scale) {
                return Err(bad(format!("entry {i}: alpha_scale {} outside [0, 1]", e.alpha_scale)));
            }
            if !(e.jitter_exponent >= 0.0 && e.jitter_exponent.is_finite()) {
                return Err(bad(format!("entry {i}: jitter_exponent must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Splits a 4x4 similarity into (linear 3x3, translation) after checking
/// that the linear part is a rotation times a positive uniform scale.
pub fn rigid_parts(m: &[f64; 16]) -> Result<([[f64; 3]; 3], [f64; 3]), String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("non-finite transform".into());
    }
    if m[12..] != [0.0, 0.0, 0.0, 1.0] {
        return Err("bottom row must be 0 0 0 1".into());
    }
    let linear = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
    let det = linear[0][0] * (linear[1][1] * linear[2][2] - linear[1][2] * linear[2][1])
        - linear[0][1] * (linear[1][0] * linear[2][2] - linear[1][2] * linear[2][0])
        + linear[0][2] * (linear[1][0] * linear[2][1] - linear[1][1] * linear[2][0]);
    if det <= 0.0 {
        return Err("transform must preserve orientation".into());
    }
    let s = det.cbrt();
    let unit = linear.map(|row| row.map(|v| v / s));
    let err = orthonormality_error(&unit);
    if err > RIGID_TOLERANCE {
        return Err(format!("transform is not rigid up to uniform scale (error {err:e})"));
    }
    Ok((linear, [m[3], m[7], m[11]]))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SceneManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| {
        Error::format(
            path,
            FormatError::Syntax {
                line: e.line(),
                message: e.to_string(),
            },
        )
    })?;
    manifest.validate().map_err(|k| Error::format(path, k))?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &SceneManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Rescales activated alphas by `p^mu` and stores them back as raw values.
/// Alphas already at zero, and `p == 1`, leave the descriptor untouched.
pub fn manipulate_alphas(desc: &mut DescriptorSet, p: f64, mu: f64) {
    if p == 1.0 {
        return;
    }
    let factor = p.powf(mu);
    for i in 0..desc.len() {
        let scaled = activate_alpha(desc.raw_alpha(i)) * factor;
        if scaled > 0.0 {
            desc.set_raw_alpha(i, scaled.min(ALPHA_CLAMP).atanh());
        } else if desc.raw_alpha(i) > 0.0 {
            desc.set_raw_alpha(i, 0.0);
        }
    }
}

/// One loaded entry before composition.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub cloud: PointCloud,
    pub descriptors: DescriptorSet,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every entry; relative paths resolve against `base_dir`.
pub fn load_entries<R: Rng + ?Sized>(
    manifest: &SceneManifest,
    base_dir: &Path,
    rng: &mut R,
) -> Result<Vec<LoadedEntry>> {
    manifest
        .validate()
        .map_err(|k| Error::format(base_dir, k))?;
    manifest
        .scenes
        .iter()
        .map(|e| {
            let cloud = load_point_cloud(resolve(base_dir, &e.cloud))?;
            let descriptors = match &e.descriptors {
                Some(p) => load_descriptors(resolve(base_dir, p))?,
                None => DescriptorSet::random(cloud.len(), manifest.descriptor_dim, rng),
            };
            if descriptors.len() != cloud.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} points but {} descriptors",
                    e.cloud.display(),
                    cloud.len(),
                    descriptors.len()
                )));
            }
            Ok(LoadedEntry { cloud, descriptors })
        })
        .collect()
}

/// Transforms, manipulates and concatenates loaded entries in manifest order.
pub fn compose_entries(manifest: &SceneManifest, entries: Vec<LoadedEntry>) -> Result<Scene> {
    if entries.len() != manifest.scenes.len() {
        return Err(Error::ShapeMismatch("entry count differs from manifest".into()));
    }
    let mut clouds = Vec::with_capacity(entries.len());
    let mut descs = Vec::with_capacity(entries.len());
    for (e, mut loaded) in manifest.scenes.iter().zip(entries) {
        let (linear, offset) = rigid_parts(&e.transform).map_err(Error::InvalidArgument)?;
        let cloud = if e.transform == IDENTITY4 {
            loaded.cloud
        } else {
            loaded.cloud.transformed(&linear, &offset)
        };
        manipulate_alphas(&mut loaded.descriptors, e.alpha_scale, e.jitter_exponent);
        clouds.push(cloud);
        descs.push(loaded.descriptors);
    }
    let dim = descs.first().map_or(manifest.descriptor_dim, |d| d.dim());
    if descs.iter().any(|d| d.dim() != dim) {
        return Err(Error::ShapeMismatch("entries have different descriptor widths".into()));
    }
    let cloud = PointCloud::concat(&clouds.iter().collect::<Vec<_>>());
    let descriptors = if descs.is_empty() {
        DescriptorSet::zeros(0, dim)
    } else {
        DescriptorSet::concat(&descs.iter().collect::<Vec<_>>())?
    };
    let mut scene = Scene::new(cloud, descriptors, "")?;
    scene.label = manifest
        .scenes
        .iter()
        .map(|e| e.label.as_str())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("+");
    if let [single] = manifest.scenes.as_slice() {
        if single.alpha_scale == 1.0 {
            scene.jitter_exponent = single.jitter_exponent;
        }
    }
    Ok(scene)
}

/// Loads and composes a manifest into one scene.
pub fn compose_scenes<R: Rng + ?Sized>(manifest: &SceneManifest, base_dir: &Path, rng: &mut R) -> Result<Scene> {
    let entries = load_entries(manifest, base_dir, rng)?;
    compose_entries(manifest, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(n: usize, dim: usize, seed: u64) -> LoadedEntry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|i| [i as f64, seed as f64, 1.0]).collect();
        let mut descriptors = DescriptorSet::random(n, dim, &mut rng);
        for i in 0..n {
            descriptors.set_raw_alpha(i, 0.1 + 0.4 * i as f64);
        }
        LoadedEntry {
            cloud: PointCloud::new(pts).unwrap(),
            descriptors,
        }
    }

    #[test]
    fn single_identity_entry_is_identity() {
        let e = entry(5, 8, 1);
        let m = SceneManifest::new(vec![ManifestEntry::new("a.ply", None)]);
        let scene = compose_entries(&m, vec![e.clone()]).unwrap();
        assert_eq!(scene.cloud, e.cloud);
        assert_eq!(scene.descriptors, e.descriptors);
    }

    #[test]
    fn order_preserved() {
        let (a, b) = (entry(3, 6, 1), entry(4, 6, 2));
        let m = SceneManifest::new(vec![ManifestEntry::new("a", None), ManifestEntry::new("b", None)]);
        let s = compose_entries(&m, vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(&s.cloud.positions()[..3], a.cloud.positions());
        assert_eq!(s.descriptors.row(3), b.descriptors.row(0));
    }

    #[test]
    fn alpha_factor_scales_activated_alphas() {
        let e = entry(6, 8, 3);
        let mut me = ManifestEntry::new("a", None);
        me.alpha_scale = 0.6;
        let s = compose_entries(&SceneManifest::new(vec![me]), vec![e.clone()]).unwrap();
        for i in 0..6 {
            let before = e.descriptors.raw_alpha(i).max(0.0).tanh();
            let after = s.descriptors.raw_alpha(i).max(0.0).tanh();
            assert!((after - 0.6 * before).abs() < 1e-12, "{after} vs {before}");
            assert_eq!(s.descriptors.color(i), e.descriptors.color(i));
        }
    }

    #[test]
    fn transform_validation() {
        let mut t = IDENTITY4;
        t[0] = 2.0;
        t[5] = 2.0;
        t[10] = 2.0;
        t[3] = 1.0;
        let (lin, off) = rigid_parts(&t).unwrap();
        assert_eq!(lin[1][1], 2.0);
        assert_eq!(off, [1.0, 0.0, 0.0]);
        t[1] = 0.5;
        assert!(rigid_parts(&t).is_err());
        let mut mirror = IDENTITY4;
        mirror[0] = -1.0;
        assert!(rigid_parts(&mirror).is_err());
    }

    #[test]
    fn size_mismatch_reported() {
        let mut e = entry(3, 4, 1);
        e.descriptors = DescriptorSet::zeros(2, 4);
        let dir = tempfile::tempdir().unwrap();
        crate::io::ply::save_point_cloud(&e.cloud, dir.path().join("c.ply"), false).unwrap();
        crate::io::descriptors::save_descriptors(&e.descriptors, dir.path().join("d.bin")).unwrap();
        let m = SceneManifest::new(vec![ManifestEntry::new("c.ply", Some("d.bin".into()))]);
        let err = compose_scenes(&m, dir.path(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }
}

//! Fitting configuration and its flat `key = value` text form.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected.
//! Keys: `iterations`, `learning_rate`, `head_learning_rate`, `optimizer`
//! (`plain-gradient` | `adaptive-moment`), `beta`, `loss_rgb` (`l1` | `l2`),
//! `crop_size` (`full` | `WxH`), `zoom_range` (`lo, hi`), `use_jitter`,
//! `jitter_probability`, `use_overlay`, `max_ray_len`, `pyramid_levels`,
//! `head` (`passthrough` | `linear`), `head_threshold`, `seed`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::head::{HeadMode, DEFAULT_FUSION_THRESHOLD};
use crate::loss::PixelLoss;
use crate::optim::OptimizerKind;
use crate::raster::DEFAULT_MAX_RAY_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    /// Step size for descriptors.
    pub learning_rate: f64,
    /// Step size for head weights and the jitter exponent.
    pub head_learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Weight of the alpha term for RGBA targets.
    pub beta: f64,
    pub loss_rgb: PixelLoss,
    /// Training window; `None` trains on the whole (zoomed) canvas.
    pub crop_size: Option<(usize, usize)>,
    pub zoom_range: (f64, f64),
    pub use_jitter: bool,
    pub jitter_probability: f64,
    pub use_overlay: bool,
    pub max_ray_len: usize,
    pub pyramid_levels: u32,
    pub head: HeadMode,
    pub head_threshold: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 1e-2,
            head_learning_rate: 1e-3,
            optimizer: OptimizerKind::AdaptiveMoment,
            beta: 1.0,
            loss_rgb: PixelLoss::L2,
            crop_size: None,
            zoom_range: (1.0, 1.0),
            use_jitter: false,
            jitter_probability: 0.5,
            use_overlay: false,
            max_ray_len: DEFAULT_MAX_RAY_LEN,
            pyramid_levels: 4,
            head: HeadMode::Passthrough,
            head_threshold: DEFAULT_FUSION_THRESHOLD,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) || !(self.head_learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("zoom range [{lo}, {hi}] must lie in (0, inf)"));
        }
        if self.max_ray_len == 0 {
            return bad("max_ray_len must be at least 1".into());
        }
        if self.pyramid_levels > 8 {
            return bad(format!("pyramid_levels {} is too deep", self.pyramid_levels));
        }
        if !(0.0..=1.0).contains(&self.jitter_probability) {
            return bad("jitter_probability must lie in [0, 1]".into());
        }
        if let Some((w, h)) = self.crop_size {
            let m = 1usize << self.pyramid_levels;
            if w == 0 || h == 0 || w % m != 0 || h % m != 0 {
                return bad(format!("crop {w}x{h} must be a positive multiple of {m}"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fit configuration");
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "head_learning_rate = {}", self.head_learning_rate);
        let _ = writeln!(s, "optimizer = {}", optimizer_name(self.optimizer));
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "loss_rgb = {}", loss_name(self.loss_rgb));
        match self.crop_size {
            Some((w, h)) => {
                let _ = writeln!(s, "crop_size = {w}x{h}");
            }
            None => {
                let _ = writeln!(s, "crop_size = full");
            }
        }
        let _ = writeln!(s, "zoom_range = {}, {}", self.zoom_range.0, self.zoom_range.1);
        let _ = writeln!(s, "use_jitter = {}", self.use_jitter);
        let _ = writeln!(s, "jitter_probability = {}", self.jitter_probability);
        let _ = writeln!(s, "use_overlay = {}", self.use_overlay);
        let _ = writeln!(s, "max_ray_len = {}", self.max_ray_len);
        let _ = writeln!(s, "pyramid_levels = {}", self.pyramid_levels);
        let _ = writeln!(s, "head = {}", head_name(self.head));
        let _ = writeln!(s, "head_threshold = {}", self.head_threshold);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Parses a config, starting from defaults for absent keys.
    pub fn from_text(text: &str) -> std::result::Result<Self, FormatError> {
        let mut cfg = FitConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| FormatError::Syntax { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(syntax)?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "head_learning_rate" => self.head_learning_rate = parse(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "plain-gradient" => OptimizerKind::PlainGradient,
                    "adaptive-moment" => OptimizerKind::AdaptiveMoment,
                    _ => return Err(format!("unknown optimizer `{value}`")),
                }
            }
            "beta" => self.beta = parse(key, value)?,
            "loss_rgb" => {
                self.loss_rgb = match value {
                    "l1" => PixelLoss::L1,
                    "l2" => PixelLoss::L2,
                    _ => return Err(format!("unknown loss `{value}`")),
                }
            }
            "crop_size" => {
                self.crop_size = if value == "full" {
                    None
                } else {
                    let (w, h) = value
                        .split_once('x')
                        .ok_or_else(|| format!("crop_size must be `full` or `WxH`, got `{value}`"))?;
                    Some((parse(key, w.trim())?, parse(key, h.trim())?))
                }
            }
            "zoom_range" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| format!("zoom_range must be `lo, hi`, got `{value}`"))?;
                self.zoom_range = (parse(key, lo.trim())?, parse(key, hi.trim())?);
            }
            "use_jitter" => self.use_jitter = parse(key, value)?,
            "jitter_probability" => self.jitter_probability = parse(key, value)?,
            "use_overlay" => self.use_overlay = parse(key, value)?,
            "max_ray_len" => self.max_ray_len = parse(key, value)?,
            "pyramid_levels" => self.pyramid_levels = parse(key, value)?,
            "head" => {
                self.head = match value {
                    "passthrough" => HeadMode::Passthrough,
                    "linear" => HeadMode::Linear,
                    _ => return Err(format!("unknown head `{value}`")),
                }
            }
            "head_threshold" => self.head_threshold = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FitConfig::from_text(&text).map_err(|k| Error::format(path, k))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn optimizer_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::PlainGradient => "plain-gradient",
        OptimizerKind::AdaptiveMoment => "adaptive-moment",
    }
}

fn loss_name(k: PixelLoss) -> &'static str {
    match k {
        PixelLoss::L1 => "l1",
        PixelLoss::L2 => "l2",
    }
}

fn head_name(k: HeadMode) -> &'static str {
    match k {
        HeadMode::Passthrough => "passthrough",
        HeadMode::Linear => "linear",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = FitConfig {
            iterations: 17,
            learning_rate: 0.125,
            optimizer: OptimizerKind::PlainGradient,
            crop_size: Some((32, 16)),
            zoom_range: (0.5, 2.0),
            use_jitter: true,
            head: HeadMode::Linear,
            seed: 99,
            ..FitConfig::default()
        };
        assert_eq!(FitConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_defaults() {
        let cfg = FitConfig::from_text("# hi\n\niterations = 5 # trailing\n").unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.learning_rate, FitConfig::default().learning_rate);
    }

    #[test]
    fn errors_name_the_line() {
        let err = FitConfig::from_text("iterations = 5\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, FormatError::Syntax { line: 2, .. }));
        let err = FitConfig::from_text("iterations five").unwrap_err();
        assert!(matches!(err, FormatError::Syntax { line: 1, .. }));
        assert!(FitConfig::from_text("loss_rgb = l3").is_err());
    }

    #[test]
    fn validation() {
        assert!(FitConfig::default().validate().is_ok());
        let mut c = FitConfig { learning_rate: 0.0, ..FitConfig::default() };
        assert!(c.validate().is_err());
        c = FitConfig { crop_size: Some((24, 32)), pyramid_levels: 4, ..FitConfig::default() };
        assert!(c.validate().is_err());
        c = FitConfig { zoom_range: (0.0, 1.0), ..FitConfig::default() };
        assert!(c.validate().is_err());
    }
}

//! Dataset directories: `cameras.txt`, one `<id>.png` per view, and an
//! optional background given as `background.png` or `background.txt`
//! (three numbers in `[0, 1]`).

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::io::cameras::{load_cameras, save_cameras, NamedCamera};
use crate::io::png::{load_image, load_target, save_image, save_render};
use crate::scene::{Background, FitDataset, TargetKind, View};

pub const CAMERAS_FILE: &str = "cameras.txt";

pub fn load_background(dir: &Path) -> Result<Option<Background>> {
    let png = dir.join("background.png");
    if png.exists() {
        let img = load_image(&png)?;
        if img.channels != 3 {
            return Err(Error::format(png, FormatError::UnsupportedImage("background must be RGB".into())));
        }
        return Ok(Some(Background::Image(img)));
    }
    let txt = dir.join("background.txt");
    if txt.exists() {
        let text = fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
        return parse_solid(&text)
            .map(|c| Some(Background::Solid(c)))
            .map_err(|k| Error::format(txt, k));
    }
    Ok(None)
}

pub fn parse_solid(text: &str) -> Result<[f64; 3], FormatError> {
    let vals: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| FormatError::Syntax {
            line: 1,
            message: e.to_string(),
        })?;
    match vals.as_slice() {
        [r, g, b] if vals.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([*r, *g, *b]),
        _ => Err(FormatError::Syntax {
            line: 1,
            message: "expected three values in [0, 1]".into(),
        }),
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<FitDataset> {
    let dir = dir.as_ref();
    let cams = load_cameras(dir.join(CAMERAS_FILE))?;
    let mut views = Vec::with_capacity(cams.len());
    for NamedCamera { id, camera } in cams {
        let target = load_target(dir.join(format!("{id}.png")))?;
        views.push(View { id, camera, target });
    }
    let kind = match views.first().map(|v| v.target.channels) {
        Some(3) => TargetKind::Rgb,
        _ => TargetKind::Rgba,
    };
    let background = load_background(dir)?;
    if let Some(Background::Image(bg)) = &background {
        if let Some(v) = views.iter().find(|v| !v.target.same_size(bg)) {
            return Err(Error::ShapeMismatch(format!("background size differs from view {}", v.id)));
        }
    }
    FitDataset::new(views, kind, background)
}

/// Writes targets (premultiplied RGBA is stored straight) and cameras.
pub fn save_dataset(data: &FitDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cams: Vec<NamedCamera> = data
        .views
        .iter()
        .map(|v| NamedCamera {
            id: v.id.clone(),
            camera: v.camera.clone(),
        })
        .collect();
    save_cameras(&cams, dir.join(CAMERAS_FILE))?;
    for v in &data.views {
        save_render(&v.target, dir.join(format!("{}.png", v.id)))?;
    }
    match &data.background {
        Some(Background::Image(img)) => save_image(img, dir.join("background.png"))?,
        Some(Background::Solid(c)) => {
            let p = dir.join("background.txt");
            fs::write(&p, format!("{} {} {}\n", c[0], c[1], c[2])).map_err(|e| Error::io(&p, e))?
        }
        None => {}
    }
    Ok(())
}

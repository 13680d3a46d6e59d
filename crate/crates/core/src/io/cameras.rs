//! Camera text format.
//!
//! ```text
//! cameras 1
//! <id> fx fy cx cy W H r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Numbers are written
//! with the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::scene::{orthonormality_error, Camera, ORTHONORMAL_TOLERANCE};

pub const CAMERAS_VERSION: u64 = 1;
const FIELDS: usize = 1 + 4 + 2 + 12;

/// A camera with the view id it was stored under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCamera {
    pub id: String,
    pub camera: Camera,
}

pub fn format_cameras(cams: &[NamedCamera]) -> String {
    let mut s = format!("cameras {CAMERAS_VERSION}\n");
    for NamedCamera { id, camera: c } in cams {
        let _ = write!(
            s,
            "{id} {} {} {} {} {} {}",
            c.focal[0], c.focal[1], c.principal[0], c.principal[1], c.width, c.height
        );
        for (row, t) in c.rotation.iter().zip(&c.translation) {
            let _ = write!(s, " {} {} {} {}", row[0], row[1], row[2], t);
        }
        s.push('\n');
    }
    s
}

pub fn parse_cameras(text: &str) -> Result<Vec<NamedCamera>, FormatError> {
    let syntax = |line: usize, message: String| FormatError::Syntax { line, message };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.split_whitespace().next() == Some("cameras") => {
            let v = l.split_whitespace().nth(1).and_then(|v| v.parse::<u64>().ok());
            match v {
                Some(CAMERAS_VERSION) => {}
                Some(other) => return Err(FormatError::UnsupportedVersion(other)),
                None => return Err(syntax(1, "missing version in header".into())),
            }
        }
        _ => return Err(FormatError::BadMagic),
    }
    let mut out: Vec<NamedCamera> = Vec::new();
    for (no, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != FIELDS {
            return Err(syntax(no, format!("expected {FIELDS} fields, found {}", toks.len())));
        }
        let id = toks[0].to_string();
        if out.iter().any(|c| c.id == id) {
            return Err(syntax(no, format!("duplicate view id '{id}'")));
        }
        let num = |k: usize| -> Result<f64, FormatError> {
            toks[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| syntax(no, format!("bad number '{}'", toks[k])))
        };
        let int = |k: usize| -> Result<usize, FormatError> {
            toks[k]
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| syntax(no, format!("bad canvas size '{}'", toks[k])))
        };
        let mut rotation = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = num(7 + 4 * r + c)?;
            }
            translation[r] = num(7 + 4 * r + 3)?;
        }
        let error = orthonormality_error(&rotation);
        if error > ORTHONORMAL_TOLERANCE {
            return Err(FormatError::NonOrthonormal { view: id, error });
        }
        let camera = Camera {
            rotation,
            translation,
            focal: [num(1)?, num(2)?],
            principal: [num(3)?, num(4)?],
            width: int(5)?,
            height: int(6)?,
        };
        if !(camera.focal[0] > 0.0 && camera.focal[1] > 0.0) {
            return Err(syntax(no, format!("view {id}: focal lengths must be positive")));
        }
        out.push(NamedCamera { id, camera });
    }
    Ok(out)
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<NamedCamera>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text).map_err(|k| Error::format(path, k))
}

pub fn save_cameras(cams: &[NamedCamera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cameras(cams)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotated() -> NamedCamera {
        let cam = Camera::look_at([0.3, -1.1, -2.7], [0.01, 0.02, 0.0], [0.0, -1.0, 0.0], 61.7, 64, 48).unwrap();
        NamedCamera {
            id: "view_007".into(),
            camera: cam,
        }
    }

    #[test]
    fn identity_and_rotated_round_trip_bit_exact() {
        let cams = vec![
            NamedCamera {
                id: "a".into(),
                camera: Camera::simple(100.0, 32, 16),
            },
            rotated(),
        ];
        let back = parse_cameras(&format_cameras(&cams)).unwrap();
        assert_eq!(back, cams);
        for (a, b) in back.iter().zip(&cams) {
            for (x, y) in a.camera.rotation.iter().flatten().zip(b.camera.rotation.iter().flatten()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_field_count() {
        let text = format_cameras(&[rotated()]);
        let cut = text.trim_end().rsplit_once(' ').unwrap().0.to_string();
        assert!(matches!(parse_cameras(&cut), Err(FormatError::Syntax { line: 2, .. })));
    }

    #[test]
    fn non_orthonormal_names_view() {
        let mut cam = rotated();
        cam.camera.rotation[1][1] *= 1.01;
        match parse_cameras(&format_cameras(&[cam])) {
            Err(FormatError::NonOrthonormal { view, .. }) => assert_eq!(view, "view_007"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_checks() {
        assert_eq!(parse_cameras("cams 1\n"), Err(FormatError::BadMagic));
        assert_eq!(parse_cameras("cameras 9\n"), Err(FormatError::UnsupportedVersion(9)));
        assert_eq!(parse_cameras("# comment\ncameras 1\n\n"), Ok(vec![]));
    }
}

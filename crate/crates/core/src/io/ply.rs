//! Polygon-file-format point cloud reader and writer.
//!
//! Only the `x`, `y`, `z` properties of the `vertex` element are used; other
//! vertex properties and other elements are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::scene::PointCloud;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlyError {
    #[error("malformed header, line {line}: {message}")]
    MalformedHeader { line: usize, message: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported element layout: {0}")]
    UnsupportedLayout(String),
    #[error("truncated body: expected {expected} vertices, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("bad value in body, line {line}: {message}")]
    BadValue { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0;
    let mut line_no = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| *pos + i);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };

    line_no += 1;
    match next_line(&mut pos) {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(header_err(line_no, "missing 'ply' magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let line = next_line(&mut pos).ok_or_else(|| header_err(line_no, "header not terminated by end_header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("version {version}")));
                }
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let count = Scalar::parse(count).ok_or_else(|| header_err(line_no, format!("unknown type '{count}'")))?;
                let item = Scalar::parse(item).ok_or_else(|| header_err(line_no, format!("unknown type '{item}'")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(line_no, "property before any element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| header_err(line_no, format!("unknown type '{ty}'")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(header_err(line_no, format!("unrecognized line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| header_err(line_no, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: pos,
    })
}

/// Positions of x, y, z within the vertex element's properties.
fn xyz_slots(el: &Element) -> Result<[usize; 3], PlyError> {
    let find = |axis: &str| {
        el.props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
            .ok_or_else(|| PlyError::UnsupportedLayout(format!("vertex element has no '{axis}' property")))
    };
    if el.props.iter().any(|p| matches!(p, Property::List { .. })) {
        return Err(PlyError::UnsupportedLayout("list property in vertex element".into()));
    }
    Ok([find("x")?, find("y")?, find("z")?])
}

fn parse_ascii(body: &[u8], header: &Header) -> Result<Vec<[f64; 3]>, PlyError> {
    let text = String::from_utf8_lossy(body);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::new();
    for el in &header.elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                if lines.next().is_none() {
                    return Err(PlyError::Truncated {
                        expected: vertex_count(header),
                        found: out.len(),
                    });
                }
            }
            continue;
        }
        let slots = xyz_slots(el)?;
        out.reserve(el.count);
        for _ in 0..el.count {
            let (i, line) = lines.next().ok_or(PlyError::Truncated {
                expected: el.count,
                found: out.len(),
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != el.props.len() {
                return Err(PlyError::BadValue {
                    line: i + 1,
                    message: format!("expected {} values, got {}", el.props.len(), toks.len()),
                });
            }
            let mut p = [0.0; 3];
            for (axis, &slot) in slots.iter().enumerate() {
                p[axis] = toks[slot].parse().map_err(|_| PlyError::BadValue {
                    line: i + 1,
                    message: format!("cannot parse '{}'", toks[slot]),
                })?;
            }
            out.push(p);
        }
        return Ok(out);
    }
    Ok(out)
}

fn vertex_count(header: &Header) -> usize {
    header.elements.iter().find(|e| e.name == "vertex").map_or(0, |e| e.count)
}

fn parse_binary(body: &[u8], header: &Header) -> Result<Vec<[f64; 3]>, PlyError> {
    let mut pos = 0usize;
    let truncated = |found| PlyError::Truncated {
        expected: vertex_count(header),
        found,
    };
    for el in &header.elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                for prop in &el.props {
                    match *prop {
                        Property::Scalar { ty, .. } => pos += ty.size(),
                        Property::List { count, item } => {
                            let bytes = body.get(pos..pos + count.size()).ok_or_else(|| truncated(0))?;
                            let n = count.read_le(bytes);
                            if n < 0.0 {
                                return Err(PlyError::BadValue {
                                    line: 0,
                                    message: "negative list length".into(),
                                });
                            }
                            pos += count.size() + n as usize * item.size();
                        }
                    }
                    if pos > body.len() {
                        return Err(truncated(0));
                    }
                }
            }
            continue;
        }
        let slots = xyz_slots(el)?;
        let mut offsets = Vec::with_capacity(el.props.len());
        let mut stride = 0;
        for prop in &el.props {
            if let Property::Scalar { ty, .. } = prop {
                offsets.push((stride, *ty));
                stride += ty.size();
            }
        }
        let available = body.len().saturating_sub(pos) / stride.max(1);
        if available < el.count {
            return Err(truncated(available));
        }
        let out = (0..el.count)
            .map(|i| {
                let rec = &body[pos + i * stride..pos + (i + 1) * stride];
                slots.map(|s| {
                    let (off, ty) = offsets[s];
                    ty.read_le(&rec[off..])
                })
            })
            .collect();
        return Ok(out);
    }
    Ok(Vec::new())
}

/// Parses an in-memory PLY file.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<Vec<[f64; 3]>, PlyError> {
    let header = parse_header(bytes)?;
    if !header.elements.iter().any(|e| e.name == "vertex") {
        return Err(PlyError::UnsupportedLayout("no vertex element".into()));
    }
    let body = &bytes[header.body_offset..];
    let points = match header.encoding {
        Encoding::Ascii => parse_ascii(body, &header)?,
        Encoding::BinaryLe => parse_binary(body, &header)?,
    };
    if let Some((i, _)) = points.iter().enumerate().find(|(_, p)| p.iter().any(|v| !v.is_finite())) {
        return Err(PlyError::BadValue {
            line: i + 1,
            message: "non-finite coordinate".into(),
        });
    }
    Ok(points)
}

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let points = parse_point_cloud(&bytes).map_err(|source| Error::Ply {
        path: path.to_path_buf(),
        source,
    })?;
    PointCloud::new(points)
}

/// Writes double-precision x, y, z; `binary` selects little-endian binary.
pub fn save_point_cloud(cloud: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    let fmt = if binary { "binary_little_endian" } else { "ascii" };
    let _ = write!(
        buf,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in cloud.positions() {
        if binary {
            for v in p {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            let _ = writeln!(buf, "{} {} {}", p[0], p[1], p[2]);
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

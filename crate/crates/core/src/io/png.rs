//! 8-bit RGB/RGBA PNG images, mapped linearly between bytes and `[0, 1]`.
//!
//! These functions do no alpha conversion. PNG stores straight alpha while
//! renders and targets are premultiplied; [`load_target`] and
//! [`save_render`] convert at the boundary.

use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage, RgbaImage};

use crate::error::{Error, FormatError, Result};
use crate::image::Image;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_png(bytes: &[u8]) -> Result<Image, FormatError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FormatError::Decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        other => return Err(FormatError::UnsupportedImage(format!("{:?}", other.color()))),
    };
    let data = raw.into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Image::from_data(w, h, channels, data).expect("decoded buffer matches its size"))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, FormatError> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_byte(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        4 => DynamicImage::ImageRgba8(RgbaImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(FormatError::UnsupportedImage(format!("{c} channels"))),
    };
    let mut out = std::io::Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| FormatError::Decode(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|k| Error::format(path, k))
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img).map_err(|k| Error::format(path, k))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Straight-alpha RGBA to premultiplied; RGB passes through.
pub fn premultiply(mut img: Image) -> Image {
    if img.channels == 4 {
        for p in img.data.chunks_exact_mut(4) {
            let a = p[3];
            p[..3].iter_mut().for_each(|c| *c *= a);
        }
    }
    img
}

/// Premultiplied RGBA to straight alpha; zero-alpha pixels become black.
pub fn unpremultiply(mut img: Image) -> Image {
    if img.channels == 4 {
        for p in img.data.chunks_exact_mut(4) {
            let a = p[3];
            p[..3]
                .iter_mut()
                .for_each(|c| *c = if a > 0.0 { (*c / a).min(1.0) } else { 0.0 });
        }
    }
    img
}

/// Loads a training target, premultiplying RGBA.
pub fn load_target(path: impl AsRef<Path>) -> Result<Image> {
    load_image(path).map(premultiply)
}

/// Saves a premultiplied render as straight-alpha PNG.
pub fn save_render(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_image(&unpremultiply(img.clone()), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_round_trip() {
        let img = Image::filled(1, 1, &[1.0, 1.0, 1.0]);
        let bytes = encode_png(&img).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_png(&back).unwrap(), bytes);
    }

    #[test]
    fn zero_alpha_preserved() {
        let img = Image::from_data(2, 1, 4, vec![0.2, 0.4, 0.6, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.pixel(0, 0)[3], 0.0);
        assert_eq!(back.pixel(1, 0), &[1.0, 0.0, 0.0, 1.0]);
        let again = decode_png(&encode_png(&back).unwrap()).unwrap();
        assert_eq!(again, back);
    }

    #[test]
    fn sixteen_bit_rejected() {
        let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, vec![65535u16, 0, 0]).unwrap();
        let mut out = std::io::Cursor::new(Vec::new());
        DynamicImage::ImageRgb16(buf).write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(decode_png(out.get_ref()), Err(FormatError::UnsupportedImage(_))));
        assert!(matches!(decode_png(b"not a png"), Err(FormatError::Decode(_))));
    }

    #[test]
    fn premultiply_inverse_on_opaque_and_clear() {
        let img = Image::from_data(2, 1, 4, vec![0.5, 0.25, 1.0, 1.0, 0.3, 0.3, 0.3, 0.0]).unwrap();
        let pm = premultiply(img.clone());
        assert_eq!(pm.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(pm.pixel(1, 0), &[0.0; 4]);
        assert_eq!(unpremultiply(pm).pixel(0, 0), img.pixel(0, 0));
    }
}

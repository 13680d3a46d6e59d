//! Full render pass: padded pyramid, decoding head, crop back to the canvas.

use crate::composite::RawImage;
use crate::error::Result;
use crate::grad::{backward_full, DescriptorGrad};
use crate::head::{HeadCache, HeadConfig, HeadGrad};
use crate::image::Image;
use crate::projection::padded_canvas;
use crate::raster::{forward_pyramid, ForwardState, RasterOptions};
use crate::scene::{Camera, Scene};

/// Camera whose canvas is rounded up to a multiple of `2^levels`.
pub fn padded_camera(camera: &Camera, levels: u32) -> Camera {
    let (w, h) = padded_canvas(camera.width, camera.height, levels);
    Camera {
        width: w,
        height: h,
        ..camera.clone()
    }
}

/// Zero-extends an image to `width x height`.
pub fn pad_image(img: &Image, width: usize, height: usize) -> Image {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let mut out = Image::new(width, height, img.channels);
    for y in 0..img.height {
        let n = img.width * img.channels;
        out.data[y * width * img.channels..y * width * img.channels + n]
            .copy_from_slice(&img.data[y * n..(y + 1) * n]);
    }
    out
}

/// Retained state of one forward render.
#[derive(Debug, Clone)]
pub struct RenderPass {
    /// Decoded RGBA at the camera's canvas size.
    pub rgba: Image,
    /// Raw images on the padded canvas.
    pub pyramid: Vec<RawImage>,
    pub state: ForwardState,
    pub cache: HeadCache,
}

pub fn render_forward(scene: &Scene, camera: &Camera, raster: &RasterOptions, head: &HeadConfig) -> Result<RenderPass> {
    let padded = padded_camera(camera, raster.levels);
    let (pyramid, state) = forward_pyramid(scene, &padded, raster);
    let (full, cache) = head.forward(&pyramid)?;
    let rgba = if padded.width == camera.width && padded.height == camera.height {
        full
    } else {
        full.crop(0, 0, camera.width, camera.height)
    };
    Ok(RenderPass {
        rgba,
        pyramid,
        state,
        cache,
    })
}

/// RGBA render of `scene` from `camera`.
pub fn render(scene: &Scene, camera: &Camera, raster: &RasterOptions, head: &HeadConfig) -> Result<Image> {
    Ok(render_forward(scene, camera, raster, head)?.rgba)
}

/// Backpropagates an RGBA gradient through head and rasterizer.
pub fn render_backward(
    scene: &Scene,
    pass: &RenderPass,
    head: &HeadConfig,
    d_rgba: &Image,
) -> Result<(DescriptorGrad, HeadGrad)> {
    let base = &pass.pyramid[0];
    let d_full = pad_image(d_rgba, base.width, base.height);
    let (d_pyr, head_grad) = head.backward(&pass.pyramid, &pass.cache, &d_full);
    let grad = backward_full(scene, &pass.state, &d_pyr)?;
    Ok((grad, head_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{DescriptorSet, PointCloud};

    #[test]
    fn odd_canvas_is_padded_and_cropped() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 1.0]]).unwrap();
        let d = DescriptorSet::new(4, vec![0.5, 0.25, 0.125, 3.0]).unwrap();
        let scene = Scene::new(cloud, d, "p").unwrap();
        let cam = Camera::simple(10.0, 13, 7);
        let pass = render_forward(&scene, &cam, &RasterOptions::new(2, 4), &HeadConfig::passthrough()).unwrap();
        assert_eq!((pass.rgba.width, pass.rgba.height), (13, 7));
        assert_eq!((pass.pyramid[0].width, pass.pyramid[0].height), (16, 8));
        assert_eq!((pass.pyramid[2].width, pass.pyramid[2].height), (4, 2));
        let px = pass.rgba.pixel(6, 3);
        assert!(px[3] > 0.99);
        let d = Image::filled(13, 7, &[1.0, 0.0, 0.0, 0.0]);
        let (g, _) = render_backward(&scene, &pass, &HeadConfig::passthrough(), &d).unwrap();
        assert!(g.values[0] > 0.0);
    }
}

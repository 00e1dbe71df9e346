//! Colorizing images of any size.
//!
//! The network sees the image resized to its input size. The predicted
//! chroma planes are resized back bilinearly and combined with the
//! lightness of the original, so output resolution and detail match the
//! input.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, ImageFormat, Luma};

use crate::colorspace::{assemble_output, rgb_to_lab, Planes, RgbImage};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::Tensor;

fn resize_plane(data: &[f32], from: (usize, usize), to: (usize, usize)) -> Vec<f32> {
    if from == to {
        return data.to_vec();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(from.0 as u32, from.1 as u32, data.to_vec()).expect("plane size matches");
    imageops::resize(&buf, to.0 as u32, to.1 as u32, FilterType::Triangle).into_raw()
}

/// Network input for `img`: lightness of the image resized to `size`.
pub fn network_input(img: &RgbImage, size: usize) -> Result<Tensor<f32>> {
    let small = if (img.width(), img.height()) == (size, size) {
        img.clone()
    } else {
        let resized = imageops::resize(&img.to_image(), size as u32, size as u32, FilterType::Triangle);
        RgbImage::from_dynamic(&image::DynamicImage::ImageRgb8(resized))
    };
    Ok(Example::from_rgb(&small, 0)?.input)
}

/// Predicted normalized chroma for `img` at its own resolution.
pub fn predict_chroma(g: &ModelGraph<f32>, img: &RgbImage) -> Result<Planes> {
    let s = g.config().input_size;
    let x = network_input(img, s)?;
    let out = g.infer(&x.reshape(&[1, 3, s, s])?)?;
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(2 * w * h);
    for c in 0..2 {
        let plane = &out.ab.data()[c * s * s..(c + 1) * s * s];
        data.extend(resize_plane(plane, (s, s), (w, h)).into_iter().map(|v| f64::from(v).clamp(0.0, 1.0)));
    }
    Planes::new(2, h, w, data)
}

pub fn colorize(g: &ModelGraph<f32>, img: &RgbImage) -> Result<RgbImage> {
    let ab = predict_chroma(g, img)?;
    let lab = rgb_to_lab(img);
    let l = Planes::new(1, img.height(), img.width(), lab.l().to_vec())?;
    assemble_output(&l, &ab)
}

/// Decodes an image at its own size; grayscale sources become gray RGB.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(RgbImage::from_dynamic(&img))
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.to_image().save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::State(format!("encoding {}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::srgb_pixel_to_lab;
    use crate::model::{ChannelScale, ModelConfig};

    fn tiny() -> ModelGraph<f32> {
        let cfg = ModelConfig { num_classes: 3, input_size: 32, channel_scale: ChannelScale::new(1, 16).unwrap(), ..Default::default() };
        ModelGraph::new(cfg, 0).unwrap()
    }

    #[test]
    fn zero_weights_give_near_gray_at_source_size() {
        let mut g = tiny();
        g.zero_weights();
        let px: Vec<[u8; 3]> = (0..50 * 30).map(|i| [(i % 250) as u8; 3]).collect();
        let img = RgbImage::new(50, 30, px).unwrap();
        let ab = predict_chroma(&g, &img).unwrap();
        assert!(ab.data.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        let out = colorize(&g, &img).unwrap();
        assert_eq!((out.width(), out.height()), (50, 30));
        for (src, dst) in img.pixels().iter().zip(out.pixels()) {
            let [l0, ..] = srgb_pixel_to_lab(*src);
            let [l1, a, b] = srgb_pixel_to_lab(*dst);
            assert!((l0 - l1).abs() < 1.0);
            assert!(a.abs() < 1.5 && b.abs() < 1.5, "{a} {b}");
        }
    }

    #[test]
    fn plane_resize_keeps_constants() {
        let v = resize_plane(&[0.25; 16], (4, 4), (9, 7));
        assert_eq!(v.len(), 63);
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-6));
    }
}

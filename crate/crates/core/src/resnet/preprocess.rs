// SPDX-License-Identifier: MIT OR Apache-2.0

//! Image decoding and the resize-256 / center-crop-224 / normalise pipeline.

use std::path::Path;

use crate::config::{IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE, RESIZE_SHORTER};
use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, center_crop, ResizeMode, Tensor};

/// `(x − mean_c) / std_c` on a `1×3×H×W` image in `[0,1]`.
pub fn normalize(rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, c, h, w] = rgb.dims4("normalize")?;
    if c != 3 {
        return Err(Error::invalid("normalize", format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = rgb.data().to_vec();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let (m, s) = (IMAGENET_MEAN[i % 3], IMAGENET_STD[i % 3]);
        for v in chunk {
            *v = (*v - m) / s;
        }
    }
    Tensor::new(rgb.shape().to_vec(), out)
}

/// Inverse of [`normalize`].
pub fn denormalize(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, _, h, w] = x.dims4("denormalize")?;
    let mut out = x.data().to_vec();
    for (i, chunk) in out.chunks_mut(h * w).enumerate() {
        let (m, s) = (IMAGENET_MEAN[i % 3], IMAGENET_STD[i % 3]);
        for v in chunk {
            *v = *v * s + m;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Interleaved `H×W×3` bytes → normalised `1×3×224×224`. A 224×224 input
/// skips the resize and is only normalised.
pub fn preprocess_rgb(rgb: &[u8], height: usize, width: usize) -> Result<Tensor<f32>> {
    if height == 0 || width == 0 || rgb.len() != height * width * 3 {
        return Err(Error::invalid(
            "preprocess",
            format!("{} bytes for a {height}×{width} RGB image", rgb.len()),
        ));
    }
    let plane = height * width;
    let mut planar = vec![0f32; 3 * plane];
    for (p, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * plane + p] = px[c] as f32;
        }
    }
    let mut img = Tensor::new(vec![1, 3, height, width], planar)?;
    let shorter = height.min(width);
    let already_input = height == INPUT_SIZE && width == INPUT_SIZE;
    if shorter != RESIZE_SHORTER && !already_input {
        let (oh, ow) = if height <= width {
            (RESIZE_SHORTER, width * RESIZE_SHORTER / height)
        } else {
            (height * RESIZE_SHORTER / width, RESIZE_SHORTER)
        };
        img = bilinear_resize(&img, oh, ow, ResizeMode::HalfPixel)?;
    }
    let img = center_crop(&img, INPUT_SIZE)?;
    normalize(&img.map(|v| v / 255.0))
}

pub fn preprocess(image: &image::RgbImage) -> Result<Tensor<f32>> {
    preprocess_rgb(image.as_raw(), image.height() as usize, image.width() as usize)
}

pub fn decode_rgb(path: &Path) -> Result<image::RgbImage> {
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Decode an image file and preprocess it.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    preprocess(&decode_rgb(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_normalises_per_channel() {
        let rgb = vec![128u8; 256 * 256 * 3];
        let t = preprocess_rgb(&rgb, 256, 256).unwrap();
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
        for c in 0..3 {
            let expected = (0.501_960_8f32 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            assert!(t.channel(c).iter().all(|&v| (v - expected).abs() < 1e-6));
        }
    }

    #[test]
    fn exact_size_is_only_normalised() {
        let rgb: Vec<u8> = (0..224 * 224 * 3).map(|i| (i % 251) as u8).collect();
        let t = preprocess_rgb(&rgb, 224, 224).unwrap();
        let back = denormalize(&t).unwrap();
        for c in 0..3 {
            for p in [0, 1000, 224 * 224 - 1] {
                let want = rgb[p * 3 + c] as f32 / 255.0;
                assert!((back.channel(c)[p] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn non_square_keeps_aspect_and_crops_center() {
        // 512 wide × 256 high: no resize, crop columns 144..368.
        let (h, w) = (256, 512);
        let rgb: Vec<u8> = (0..h * w)
            .flat_map(|p| {
                let x = (p % w) as u8;
                [x, x, x]
            })
            .collect();
        let t = preprocess_rgb(&rgb, h, w).unwrap();
        let back = denormalize(&t).unwrap();
        let first = back.channel(0)[0] * 255.0;
        assert!((first - ((144 % 256) as f32)).abs() < 1e-3, "{first}");
    }

    #[test]
    fn small_image_is_upsampled() {
        let rgb = vec![10u8; 100 * 150 * 3];
        let t = preprocess_rgb(&rgb, 100, 150).unwrap();
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
        assert!(preprocess_rgb(&rgb, 100, 100).is_err());
    }
}

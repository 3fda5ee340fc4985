//! PNG decoding/encoding to and from `[0, 1]` tensors.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor};

/// Decodes an 8-bit image as a `(1, 3, h, w)` tensor; grayscale is replicated.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_dynamic(&img))
}

pub fn from_dynamic<T: Real>(img: &DynamicImage) -> Tensor<T> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Tensor::from_fn(Dims::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        T::of(rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    })
}

fn quantize<T: Real>(v: T) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes item `n` of a 1- or 3-channel tensor, clamped to `[0, 1]`.
pub fn to_dynamic<T: Real>(t: &Tensor<T>, n: usize) -> Result<DynamicImage> {
    let d = t.dims();
    let (w, h) = (d.w as u32, d.h as u32);
    match d.c {
        3 => Ok(DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb([0, 1, 2].map(|c| quantize(t.at(n, c, y as usize, x as usize))))
        }))),
        1 => Ok(DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(t.at(n, 0, y as usize, x as usize))])
        }))),
        c => Err(Error::shape("save_image", format!("cannot encode {c} channels as an image"))),
    }
}

pub fn save_image<T: Real>(t: &Tensor<T>, n: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    to_dynamic(t, n)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_8bit_values() {
        let t = Tensor::<f32>::from_fn(Dims::new(1, 3, 5, 4), |_, c, y, x| ((c * 20 + y * 4 + x) as f32) / 255.0);
        let dir = tempfile_dir();
        let p = dir.join("a.png");
        save_image(&t, 0, &p).unwrap();
        let back: Tensor<f32> = load_image(&p).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() < 1e-6);
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn tempfile_dir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("daflow-img-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}

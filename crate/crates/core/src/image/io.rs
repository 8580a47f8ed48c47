use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, DynamicImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an 8-bit RGB image into a `3 x H x W` tensor scaled to `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| image_err(path, e.to_string()))?;
    let rgb = match decoded {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(image_err(
                path,
                format!("expected 3-channel RGB, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let scale = T::of(1.0 / 255.0);
    let plane = h * w;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of(px[c] as f64) * scale;
        }
    }
    Tensor::new([3, h, w], data)
}

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// PNG bytes of a `3 x H x W` tensor, clamped to `[0, 1]` first.
pub fn encode_png<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(Error::dim(
                "save_image",
                format!("expected CHW, got {:?}", s),
            ))
        }
    };
    let plane = h * w;
    let (color, buf): (ColorType, Vec<u8>) = match c {
        3 => {
            let mut buf = vec![0u8; 3 * plane];
            for i in 0..plane {
                for ch in 0..3 {
                    buf[3 * i + ch] = quantize(t.data()[ch * plane + i]);
                }
            }
            (ColorType::Rgb8, buf)
        }
        1 => (
            ColorType::L8,
            t.data().iter().map(|&v| quantize(v)).collect(),
        ),
        _ => {
            return Err(Error::dim(
                "save_image",
                format!("expected 1 or 3 channels, got {}", c),
            ))
        }
    };
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new(&mut out)
        .write_image(&buf, w as u32, h as u32, color)
        .map_err(|e| Error::contract("save_image", e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes a `3 x H x W` (or `1 x H x W` grayscale) tensor as an 8-bit PNG.
pub fn save_image<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let bytes = encode_png(t)?;
    write_atomic(path, &bytes)
}

/// Maps a signed map (e.g. a detail layer) into `[0, 1]` as `0.5 + x / 2`.
pub fn signed_to_display<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let half = T::of(0.5);
    t.map(|v| half + v * half)
}

/// Inverse of [`signed_to_display`].
pub fn display_to_signed<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let two = T::of(2.0);
    let half = T::of(0.5);
    t.map(|v| (v - half) * two)
}

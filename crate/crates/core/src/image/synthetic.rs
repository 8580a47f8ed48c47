//! Seeded toy scenes (smooth gradients plus a few flat shapes) for
//! self-contained training and tests.

use std::path::Path;

use rand::Rng;

use super::dataset::DatasetManifest;
use super::io::save_image;
use super::rain::{synthesize_rain, RainParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

/// Clean `3 x h x w` scene with values in roughly `[0.05, 0.8]`.
pub fn toy_scene<T: Scalar>(h: usize, w: usize, seed_value: u64) -> Tensor<T> {
    let mut rng = seed::rng(seed_value, "toy-scene", 0);
    let color = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
        [
            rng.gen_range(0.05..0.7),
            rng.gen_range(0.05..0.7),
            rng.gen_range(0.05..0.7),
        ]
    };
    let from = color(&mut rng);
    let to = color(&mut rng);
    let dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ux, uy) = (dir.cos(), dir.sin());
    let wave_freq = rng.gen_range(0.5..2.0);
    let wave_amp = rng.gen_range(0.0..0.06);

    let plane = h * w;
    let mut img = vec![0.0f64; 3 * plane];
    let diag = ((h * h + w * w) as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 - w as f64 / 2.0, y as f64 - h as f64 / 2.0);
            let t = ((fx * ux + fy * uy) / diag + 0.5).clamp(0.0, 1.0);
            let wave = wave_amp * (wave_freq * std::f64::consts::TAU * y as f64 / h as f64).sin();
            for c in 0..3 {
                img[c * plane + y * w + x] = from[c] + (to[c] - from[c]) * t + wave;
            }
        }
    }

    let shapes = rng.gen_range(2..=4);
    for _ in 0..shapes {
        let col = color(&mut rng);
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let size = rng.gen_range(0.1..0.3) * h.min(w) as f64;
        let circle = rng.gen_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                // signed distance to the shape boundary, one pixel of antialiasing
                let d = if circle {
                    (dx * dx + dy * dy).sqrt() - size
                } else {
                    dx.abs().max(dy.abs()) - size
                };
                let a = (0.5 - d).clamp(0.0, 1.0);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = &mut img[c * plane + y * w + x];
                        *v = *v * (1.0 - a) + col[c] * a;
                    }
                }
            }
        }
    }
    Tensor::new(
        [3, h, w],
        img.into_iter().map(|v| T::of(v.clamp(0.0, 1.0))).collect(),
    )
    .expect("scene shape")
}

/// Writes `count` clean/rainy toy pairs as PNGs into `dir` together with a
/// `manifest.txt`. Scene `i` uses seed sub-stream `i` of `seed_value`; rain
/// seeds are drawn from their own sub-stream.
pub fn write_toy_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed_value: u64,
    rain: &RainParams,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest::default();
    for i in 0..count {
        let clean: Tensor<f32> =
            toy_scene(size, size, seed::substream(seed_value, "scene", i as u64));
        let params = RainParams {
            seed: seed::substream(seed_value, "rain", i as u64),
            ..rain.clone()
        };
        let rainy = synthesize_rain(&clean, &params)?;
        let clean_path = dir.join(format!("clean_{:03}.png", i));
        let rainy_path = dir.join(format!("rainy_{:03}.png", i));
        save_image(&clean, &clean_path)?;
        save_image(&rainy, &rainy_path)?;
        manifest.entries.push((rainy_path, clean_path));
    }
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

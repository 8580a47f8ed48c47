use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest deviation of a single streak from the global rain angle.
pub const MAX_JITTER_DEGREES: f64 = 5.0;

/// Parameters of the additive streak model.
#[derive(Clone, Debug, PartialEq)]
pub struct RainParams {
    /// Streak orientation measured from vertical, clockwise positive.
    pub angle_degrees: f64,
    /// Streaks per 1000 pixels.
    pub density: f64,
    pub length_px: f64,
    pub width_px: f64,
    /// Additive brightness of a fully covered pixel.
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            angle_degrees: 10.0,
            density: 2.0,
            length_px: 18.0,
            width_px: 1.5,
            intensity: 0.6,
            seed: 0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::contract("synthesize_rain", what.to_string()));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be positive");
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad("intensity must lie in [0, 1]");
        }
        if !(self.length_px > 0.0 && self.width_px > 0.0) {
            return bad("streak length and width must be positive");
        }
        if !self.angle_degrees.is_finite() {
            return bad("angle must be finite");
        }
        Ok(())
    }
}

/// Number of streaks drawn on an `h x w` image: `floor(h * w / 1000 * density)`.
pub fn streak_count(h: usize, w: usize, density: f64) -> usize {
    ((h * w) as f64 / 1000.0 * density).floor() as usize
}

/// One straight streak segment in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Streak {
    pub cx: f64,
    pub cy: f64,
    pub angle_degrees: f64,
    pub length: f64,
}

/// Streak geometry for an `h x w` image; deterministic in `params.seed`.
pub fn streaks(h: usize, w: usize, params: &RainParams) -> Vec<Streak> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    (0..streak_count(h, w, params.density))
        .map(|_| Streak {
            cx: rng.gen::<f64>() * w as f64,
            cy: rng.gen::<f64>() * h as f64,
            angle_degrees: params.angle_degrees
                + rng.gen_range(-MAX_JITTER_DEGREES..=MAX_JITTER_DEGREES),
            length: params.length_px * rng.gen_range(0.75..=1.25),
        })
        .collect()
}

/// Anti-aliased streak coverage in `[0, 1]` for every pixel of an `h x w`
/// image.
pub fn rain_layer(h: usize, w: usize, params: &RainParams) -> Vec<f64> {
    let mut layer = vec![0.0f64; h * w];
    let half_width = params.width_px / 2.0;
    for s in streaks(h, w, params) {
        let theta = s.angle_degrees.to_radians();
        let (dx, dy) = (theta.sin(), theta.cos());
        let half = s.length / 2.0;
        let reach = half + half_width + 1.0;
        let y0 = ((s.cy - reach).floor().max(0.0)) as usize;
        let y1 = ((s.cy + reach).ceil().min(h as f64)) as usize;
        let x0 = ((s.cx - reach).floor().max(0.0)) as usize;
        let x1 = ((s.cx + reach).ceil().min(w as f64)) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let px = x as f64 + 0.5 - s.cx;
                let py = y as f64 + 0.5 - s.cy;
                let t = (px * dx + py * dy).clamp(-half, half);
                let dist = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
                let cover = (half_width + 0.5 - dist).clamp(0.0, 1.0);
                let cell = &mut layer[y * w + x];
                *cell = (*cell + cover).min(1.0);
            }
        }
    }
    layer
}

/// Adds white rain streaks to a `3 x H x W` clean image and clips to `[0, 1]`.
pub fn synthesize_rain<T: Scalar>(clean: &Tensor<T>, params: &RainParams) -> Result<Tensor<T>> {
    params.validate()?;
    let (h, w) = match *clean.shape() {
        [_, h, w] => (h, w),
        ref s => {
            return Err(Error::dim(
                "synthesize_rain",
                format!("expected CHW, got {:?}", s),
            ))
        }
    };
    let layer = rain_layer(h, w, params);
    let plane = h * w;
    let data = clean
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let add = params.intensity * layer[i % plane];
            T::of((v.as_f64() + add).clamp(0.0, 1.0))
        })
        .collect();
    Tensor::new(clean.shape().to_vec(), data)
}

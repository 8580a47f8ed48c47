use crate::autodiff::conv::resolve;
use crate::autodiff::PadMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the label low-pass filter.
pub const LOWPASS_SIGMA: f64 = 2.0;
/// Side length of the label low-pass kernel.
pub const LOWPASS_SIZE: usize = 11;

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Separable filtering of every `H x W` plane of a `C x H x W` tensor.
pub(crate) fn separable_filter<T: Scalar>(
    t: &Tensor<T>,
    taps: &[f64],
    mode: PadMode,
) -> Result<Tensor<T>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::dim("lowpass", format!("expected CHW, got {:?}", s))),
    };
    let r = (taps.len() / 2) as isize;
    let plane = h * w;
    let mut tmp = vec![0.0f64; plane];
    let mut out = vec![T::zero(); c * plane];
    for ch in 0..c {
        let src = &t.data()[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &tap) in taps.iter().enumerate() {
                    if let Some(sx) = resolve(x as isize + k as isize - r, w, mode) {
                        acc += tap * src[y * w + sx].as_f64();
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &tap) in taps.iter().enumerate() {
                    if let Some(sy) = resolve(y as isize + k as isize - r, h, mode) {
                        acc += tap * tmp[sy * w + x];
                    }
                }
                dst[y * w + x] = T::of(acc);
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Gaussian low-pass (sigma 2, 11x11, reflect padding) applied per channel.
pub fn lowpass<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match *t.shape() {
        [_, h, w] if h >= LOWPASS_SIZE && w >= LOWPASS_SIZE => {}
        ref s => {
            return Err(Error::contract(
                "lowpass",
                format!(
                    "image {:?} is smaller than the {}x{} kernel",
                    s, LOWPASS_SIZE, LOWPASS_SIZE
                ),
            ))
        }
    }
    separable_filter(
        t,
        &gaussian_kernel_1d(LOWPASS_SIZE, LOWPASS_SIGMA),
        PadMode::Reflect,
    )
}

/// Splits a clean image into its low-frequency structure and the signed
/// high-frequency detail residual, `structure + detail == clean`.
pub fn decompose_label<T: Scalar>(clean: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let structure = lowpass(clean)?;
    let detail = clean.zip_map(&structure, |c, s| c - s)?;
    Ok((structure, detail))
}

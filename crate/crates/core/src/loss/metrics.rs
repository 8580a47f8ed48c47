use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ssim::{ssim, SsimParams};

fn check<T: Scalar>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    if x.is_empty() {
        return Err(Error::dim(op, "empty images"));
    }
    Ok(())
}

/// Mean squared difference, accumulated in 64-bit.
pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check("mse", x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, max_val: f64) -> Result<f64> {
    let e = mse(x, y)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / e).log10())
}

/// SSIM of two `C x H x W` or `N x C x H x W` images, evaluated in 64-bit.
pub fn ssim_value<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check("ssim", x, y)?;
    let lift = |t: &Tensor<T>| {
        let t = t.cast::<f64>();
        if t.ndim() == 3 {
            t.unsqueeze0()
        } else {
            t
        }
    };
    let mut g = Graph::new();
    let a = g.constant(lift(x));
    let b = g.constant(lift(y));
    let s = ssim(&mut g, a, b, &SsimParams::default())?;
    Ok(g.value(s).data()[0])
}

use crate::autodiff::{Graph, PadSpec, ReduceKind, Var};
use crate::error::{Error, Result};
use crate::image::gaussian_kernel_1d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Window and stabilizing constants of the structural similarity index.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: SSIM_WINDOW,
            sigma: SSIM_SIGMA,
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
        }
    }
}

/// Mean SSIM over all valid window positions and channels of two `N x C x H x W`
/// images, differentiable in both arguments.
pub fn ssim<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if g.shape(y) != shape.as_slice() {
        return Err(Error::dim(
            "ssim",
            format!("{:?} vs {:?}", shape, g.shape(y)),
        ));
    }
    let [n, c, h, w] = shape[..] else {
        return Err(Error::dim("ssim", format!("expected NCHW, got {shape:?}")));
    };
    let k = params.window;
    if h < k || w < k {
        return Err(Error::contract(
            "ssim",
            format!("image {h}x{w} is smaller than the {k}x{k} window"),
        ));
    }
    let planes = n * c;
    let taps: Vec<T> = gaussian_kernel_1d(k, params.sigma)
        .into_iter()
        .map(T::of)
        .collect();
    let row = g.constant(Tensor::new([1, 1, 1, k], taps.clone())?);
    let col = g.constant(Tensor::new([1, 1, k, 1], taps)?);

    let xs = g.reshape(x, &[planes, 1, h, w])?;
    let ys = g.reshape(y, &[planes, 1, h, w])?;
    let xx = g.mul(xs, xs)?;
    let yy = g.mul(ys, ys)?;
    let xy = g.mul(xs, ys)?;
    let stacked = g.concat(&[xs, ys, xx, yy, xy], 0)?;
    let blurred = g.conv2d(stacked, row, None, 1, PadSpec::none())?;
    let blurred = g.conv2d(blurred, col, None, 1, PadSpec::none())?;
    let mut part = |i: usize| g.narrow(blurred, 0, i * planes, planes);
    let (mu_x, mu_y, e_xx, e_yy, e_xy) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);

    let mx2 = g.mul(mu_x, mu_x)?;
    let my2 = g.mul(mu_y, mu_y)?;
    let mxy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mx2)?;
    let var_y = g.sub(e_yy, my2)?;
    let cov = g.sub(e_xy, mxy)?;

    let two = T::of(2.0);
    let (c1, c2) = (T::of(params.c1), T::of(params.c2));
    let a = g.scale(mxy, two)?;
    let a = g.add_scalar(a, c1)?;
    let b = g.scale(cov, two)?;
    let b = g.add_scalar(b, c2)?;
    let num = g.mul(a, b)?;
    let d1 = g.add(mx2, my2)?;
    let d1 = g.add_scalar(d1, c1)?;
    let d2 = g.add(var_x, var_y)?;
    let d2 = g.add_scalar(d2, c2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    g.reduce(map, ReduceKind::Mean)
}

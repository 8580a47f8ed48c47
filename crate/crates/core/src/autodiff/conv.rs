use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{dims4, Tensor};

/// How out-of-range samples are produced at the image border.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`-1 -> 1`).
    Reflect,
    /// Clamp to the nearest edge sample.
    Replicate,
}

/// Border mode plus the number of padded rows/columns on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadSpec {
    pub mode: PadMode,
    pub h: usize,
    pub w: usize,
}

impl PadSpec {
    pub fn new(mode: PadMode, h: usize, w: usize) -> Self {
        PadSpec { mode, h, w }
    }

    /// Padding that keeps the spatial size for a stride-1 `kh x kw` kernel.
    pub fn same(mode: PadMode, kh: usize, kw: usize) -> Self {
        PadSpec {
            mode,
            h: kh / 2,
            w: kw / 2,
        }
    }

    pub fn none() -> Self {
        PadSpec {
            mode: PadMode::Zero,
            h: 0,
            w: 0,
        }
    }
}

/// Maps a possibly out-of-range coordinate onto the source axis.
pub(crate) fn resolve(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n - 1) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let mut r = i.rem_euclid(period);
            if r >= n {
                r = period - r;
            }
            Some(r as usize)
        }
    }
}

const OUTSIDE: u32 = u32::MAX;

/// Per-tap source index for every output position, shared by all channels.
struct Geometry {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: PadSpec,
    /// Stride 1 with zero padding: rows of each tap are contiguous copies.
    direct: bool,
    hw: usize,
    taps: usize,
    positions: usize,
    out_h: usize,
    out_w: usize,
    table: Vec<u32>,
}

impl Geometry {
    fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: PadSpec) -> Result<Self> {
        if pad.mode == PadMode::Reflect && (pad.h >= h || pad.w >= w) {
            return Err(Error::contract(
                "conv2d",
                format!(
                    "reflect padding ({}, {}) needs an input larger than {}x{}",
                    pad.h, pad.w, h, w
                ),
            ));
        }
        let padded_h = h + 2 * pad.h;
        let padded_w = w + 2 * pad.w;
        if padded_h < kh || padded_w < kw {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh, kw, padded_h, padded_w
                ),
            ));
        }
        let out_h = (padded_h - kh) / stride + 1;
        let out_w = (padded_w - kw) / stride + 1;
        let positions = out_h * out_w;
        let taps = kh * kw;
        let direct = stride == 1 && pad.mode == PadMode::Zero;
        let mut table = vec![OUTSIDE; if direct { 0 } else { taps * positions }];
        for ky in 0..if direct { 0 } else { kh } {
            for kx in 0..kw {
                let row = &mut table[(ky * kw + kx) * positions..][..positions];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad.h as isize;
                    let Some(sy) = resolve(iy, h, pad.mode) else {
                        continue;
                    };
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad.w as isize;
                        if let Some(sx) = resolve(ix, w, pad.mode) {
                            row[oy * out_w + ox] = (sy * w + sx) as u32;
                        }
                    }
                }
            }
        }
        Ok(Geometry {
            h,
            w,
            kh,
            kw,
            pad,
            direct,
            hw: h * w,
            taps,
            positions,
            out_h,
            out_w,
            table,
        })
    }

    /// For tap `(ky, kx)` and output row `oy`: the source row, if inside the
    /// image, and the output column range whose sources are inside.
    #[inline]
    fn direct_span(&self, ky: usize, kx: usize, oy: usize) -> Option<(usize, usize, usize)> {
        let iy = (oy + ky) as isize - self.pad.h as isize;
        if iy < 0 || iy >= self.h as isize {
            return None;
        }
        let shift = kx as isize - self.pad.w as isize;
        let lo = ((-shift).max(0) as usize).min(self.out_w);
        let hi = ((self.w as isize - shift).min(self.out_w as isize)).max(lo as isize) as usize;
        Some((iy as usize, lo, hi))
    }

    /// Unfolds one image (`c x h x w`) into a `(c * taps) x positions` matrix.
    fn im2col<T: Scalar>(&self, image: &[T], channels: usize, col: &mut [T]) {
        if self.direct {
            for c in 0..channels {
                let src = &image[c * self.hw..(c + 1) * self.hw];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let k = ky * self.kw + kx;
                        let dst =
                            &mut col[(c * self.taps + k) * self.positions..][..self.positions];
                        for oy in 0..self.out_h {
                            let row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                            match self.direct_span(ky, kx, oy) {
                                None => row.fill(T::zero()),
                                Some((iy, lo, hi)) if hi > lo => {
                                    row[..lo].fill(T::zero());
                                    row[hi..].fill(T::zero());
                                    let sx = (lo + kx) - self.pad.w;
                                    row[lo..hi].copy_from_slice(
                                        &src[iy * self.w + sx..iy * self.w + sx + (hi - lo)],
                                    );
                                }
                                Some(_) => row.fill(T::zero()),
                            }
                        }
                    }
                }
            }
            return;
        }
        for c in 0..channels {
            let src = &image[c * self.hw..(c + 1) * self.hw];
            for k in 0..self.taps {
                let dst = &mut col[(c * self.taps + k) * self.positions..][..self.positions];
                let idx = &self.table[k * self.positions..][..self.positions];
                for (d, &i) in dst.iter_mut().zip(idx) {
                    *d = if i == OUTSIDE {
                        T::zero()
                    } else {
                        src[i as usize]
                    };
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], channels: usize, image: &mut [T]) {
        if self.direct {
            for c in 0..channels {
                let dst = &mut image[c * self.hw..(c + 1) * self.hw];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let k = ky * self.kw + kx;
                        let src = &col[(c * self.taps + k) * self.positions..][..self.positions];
                        for oy in 0..self.out_h {
                            if let Some((iy, lo, hi)) =
                                self.direct_span(ky, kx, oy).filter(|s| s.2 > s.1)
                            {
                                let sx = (lo + kx) - self.pad.w;
                                let d = &mut dst[iy * self.w + sx..iy * self.w + sx + (hi - lo)];
                                for (a, &b) in d
                                    .iter_mut()
                                    .zip(&src[oy * self.out_w + lo..oy * self.out_w + hi])
                                {
                                    *a += b;
                                }
                            }
                        }
                    }
                }
            }
            return;
        }
        for c in 0..channels {
            let dst = &mut image[c * self.hw..(c + 1) * self.hw];
            for k in 0..self.taps {
                let src = &col[(c * self.taps + k) * self.positions..][..self.positions];
                let idx = &self.table[k * self.positions..][..self.positions];
                for (&v, &i) in src.iter().zip(idx) {
                    if i != OUTSIDE {
                        dst[i as usize] += v;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of an NCHW input with an `O x I x kh x kw`
    /// kernel plus an optional per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: PadSpec,
    ) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input), "conv2d")?;
        let (o, i, kh, kw) = dims4(self.shape(kernel), "conv2d").map_err(|_| {
            Error::dim(
                "conv2d",
                format!("kernel must be OIkk, got {:?}", self.shape(kernel)),
            )
        })?;
        if i != c {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input channels (axis 1) = {} but kernel in-channels (axis 1) = {}",
                    c, i
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::contract(
                "conv2d",
                format!("kernel spatial dims must be odd, got {}x{}", kh, kw),
            ));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d", "stride must be positive"));
        }
        if let Some(b) = bias {
            if self.value(b).len() != o {
                return Err(Error::dim(
                    "conv2d",
                    format!(
                        "bias has {} values for {} output channels (kernel axis 0)",
                        self.value(b).len(),
                        o
                    ),
                ));
            }
        }
        let geo = Geometry::new(h, w, kh, kw, stride, pad)?;
        let rows = c * geo.taps;
        let x = self.value(input).data();
        let wk = self.value(kernel).data();
        let mut out = vec![T::zero(); n * o * geo.positions];
        let mut col = vec![T::zero(); rows * geo.positions];
        for b in 0..n {
            geo.im2col(&x[b * c * geo.hw..(b + 1) * c * geo.hw], c, &mut col);
            let dst = &mut out[b * o * geo.positions..(b + 1) * o * geo.positions];
            gemm(
                MatRef::new(wk, o, rows),
                MatRef::new(&col, rows, geo.positions),
                dst,
                false,
            );
            if let Some(bv) = bias {
                let bias = self.value(bv).data();
                for (oc, chunk) in dst.chunks_mut(geo.positions).enumerate() {
                    for v in chunk {
                        *v += bias[oc];
                    }
                }
            }
        }
        let value = Tensor::new([n, o, geo.out_h, geo.out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    pad: PadSpec,
    gy: &[T],
) {
    let x = &nodes[input.index()].value;
    let k = &nodes[kernel.index()].value;
    let (n, c, h, w) = x.dims4().expect("validated in forward");
    let (o, _, kh, kw) = k.dims4().expect("validated in forward");
    let geo = Geometry::new(h, w, kh, kw, stride, pad).expect("validated in forward");
    let rows = c * geo.taps;
    let p = geo.positions;

    if let Some(b) = bias {
        if let Some(gb) = grad_slot(nodes, grads, b) {
            for bi in 0..n {
                for (oc, chunk) in gy[bi * o * p..(bi + 1) * o * p].chunks(p).enumerate() {
                    gb[oc] += chunk.iter().copied().sum::<T>();
                }
            }
        }
    }

    let need_kernel = nodes[kernel.index()].requires_grad;
    let need_input = nodes[input.index()].requires_grad;
    let mut col = vec![T::zero(); rows * p];
    if need_kernel {
        let gk = grad_slot(nodes, grads, kernel).expect("kernel requires grad");
        for bi in 0..n {
            geo.im2col(
                &x.data()[bi * c * geo.hw..(bi + 1) * c * geo.hw],
                c,
                &mut col,
            );
            gemm(
                MatRef::new(&gy[bi * o * p..(bi + 1) * o * p], o, p),
                MatRef::new(&col, rows, p).t(),
                gk,
                true,
            );
        }
    }
    if need_input {
        let gx = grad_slot(nodes, grads, input).expect("input requires grad");
        for bi in 0..n {
            gemm(
                MatRef::new(k.data(), o, rows).t(),
                MatRef::new(&gy[bi * o * p..(bi + 1) * o * p], o, p),
                &mut col,
                false,
            );
            geo.col2im(&col, c, &mut gx[bi * c * geo.hw..(bi + 1) * c * geo.hw]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_modes() {
        assert_eq!(resolve(-1, 5, PadMode::Zero), None);
        assert_eq!(resolve(-1, 5, PadMode::Replicate), Some(0));
        assert_eq!(resolve(-2, 5, PadMode::Reflect), Some(2));
        assert_eq!(resolve(5, 5, PadMode::Reflect), Some(3));
        assert_eq!(resolve(7, 5, PadMode::Replicate), Some(4));
        assert_eq!(resolve(3, 5, PadMode::Zero), Some(3));
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn([2, 1, 3, 4], |i| i as f32 * 0.1 - 0.5));
        let k = g.constant(Tensor::full([1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros([1]));
        let y = g.conv2d(x, k, Some(b), 1, PadSpec::none()).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn box_filter_preserves_constants_with_reflect_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full([1, 1, 6, 5], 0.37));
        let k = g.constant(Tensor::full([1, 1, 3, 3], 1.0 / 9.0));
        let y = g
            .conv2d(x, k, None, 1, PadSpec::same(PadMode::Reflect, 3, 3))
            .unwrap();
        assert_eq!(g.shape(y), &[1, 1, 6, 5]);
        for v in g.value(y).data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_output_size() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, 9, 8]));
        let k = g.constant(Tensor::zeros([3, 2, 3, 3]));
        let y = g
            .conv2d(x, k, None, 2, PadSpec::same(PadMode::Zero, 3, 3))
            .unwrap();
        assert_eq!(g.shape(y), &[1, 3, 5, 4]);
    }

    #[test]
    fn shape_errors_name_axes() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, 5, 5]));
        let k = g.constant(Tensor::zeros([3, 4, 3, 3]));
        let err = g.conv2d(x, k, None, 1, PadSpec::none()).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
        let k = g.constant(Tensor::zeros([3, 2, 2, 3]));
        assert!(g.conv2d(x, k, None, 1, PadSpec::none()).is_err());
    }

    fn naive(x: &Tensor<f64>, k: &Tensor<f64>, ph: usize, pw: usize) -> Vec<f64> {
        let (n, c, h, w) = x.dims4().unwrap();
        let (o, _, kh, kw) = k.dims4().unwrap();
        let (oh, ow) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y + ky) as isize - ph as isize;
                                    let ix = (xx + kx) as isize - pw as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += x.data()
                                            [((b * c + ic) * h + iy as usize) * w + ix as usize]
                                            * k.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out[((b * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_padded_conv_matches_naive_loops() {
        let mut state = 17u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(h, w, kh, kw, ph, pw) in &[
            (5, 6, 3, 3, 1, 1),
            (2, 3, 5, 5, 2, 2),
            (1, 1, 3, 3, 1, 1),
            (4, 7, 1, 5, 0, 2),
            (6, 2, 5, 1, 2, 0),
            (7, 7, 3, 3, 3, 0),
        ] {
            let x = Tensor::from_fn([2, 2, h, w], |_| next());
            let k = Tensor::from_fn([3, 2, kh, kw], |_| next());
            let mut g = Graph::new();
            let (xv, kv) = (g.leaf(x.clone()), g.leaf(k.clone()));
            let y = g
                .conv2d(xv, kv, None, 1, PadSpec::new(PadMode::Zero, ph, pw))
                .unwrap();
            let expect = naive(&x, &k, ph, pw);
            for (a, b) in g.value(y).data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
            // the input gradient of sum(y) is the naive conv of ones with the flipped kernel
            let l = g.reduce(y, crate::autodiff::ReduceKind::Mean).unwrap();
            g.backward(l).unwrap();
            let gx = g.grad(xv).unwrap();
            let per = 1.0 / g.value(y).len() as f64;
            let mut manual = vec![0.0; x.len()];
            let (oh, ow) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
            for b in 0..2 {
                for oc in 0..3 {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            for ic in 0..2 {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (yy + ky) as isize - ph as isize;
                                        let ix = (xx + kx) as isize - pw as isize;
                                        if iy >= 0
                                            && ix >= 0
                                            && (iy as usize) < h
                                            && (ix as usize) < w
                                        {
                                            manual[((b * 2 + ic) * h + iy as usize) * w
                                                + ix as usize] +=
                                                per * k.data()[((oc * 2 + ic) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (a, b) in gx.data().iter().zip(&manual) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

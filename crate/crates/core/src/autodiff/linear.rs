use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{dims4, Tensor};

impl<T: Scalar> Graph<T> {
    /// Affine map `x W^T + b` for `x` of shape `N x ...` (flattened to
    /// `N x in`) and `W` of shape `out x in`. Returns `N x out`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input);
        let n = *xs
            .first()
            .ok_or_else(|| Error::dim("fully_connected", "input has no batch axis"))?;
        let features: usize = xs[1..].iter().product();
        let (out_f, in_f) = match *self.shape(weight) {
            [o, i] => (o, i),
            ref s => {
                return Err(Error::dim(
                    "fully_connected",
                    format!("weight must be 2-D, got {:?}", s),
                ))
            }
        };
        if in_f != features {
            return Err(Error::dim(
                "fully_connected",
                format!("input has {} features, weight expects {}", features, in_f),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != out_f {
                return Err(Error::dim(
                    "fully_connected",
                    format!(
                        "bias has {} values for {} outputs",
                        self.value(b).len(),
                        out_f
                    ),
                ));
            }
        }
        let mut out = vec![T::zero(); n * out_f];
        gemm(
            MatRef::new(self.value(input).data(), n, in_f),
            MatRef::new(self.value(weight).data(), out_f, in_f).t(),
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(out_f) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let value = Tensor::new([n, out_f], out)?;
        self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        )
    }

    /// Multiplies every `H x W` plane of an NCHW tensor by its own gate value;
    /// `gate` holds `N * C` values (`N x C` or `N x C x 1 x 1`).
    pub fn channel_scale(&mut self, input: Var, gate: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input), "channel_scale")?;
        if self.value(gate).len() != n * c || self.shape(gate).first() != Some(&n) {
            return Err(Error::dim(
                "channel_scale",
                format!(
                    "gate {:?} does not match input {:?}",
                    self.shape(gate),
                    self.shape(input)
                ),
            ));
        }
        let hw = h * w;
        let x = self.value(input).data();
        let s = self.value(gate).data();
        let mut out = vec![T::zero(); x.len()];
        for (plane, (dst, src)) in out.chunks_mut(hw).zip(x.chunks(hw)).enumerate() {
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v * s[plane];
            }
        }
        let value = Tensor::new([n, c, h, w], out)?;
        self.push(value, Op::ChannelScale { input, gate })
    }
}

pub(super) fn backward_linear<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    weight: Var,
    bias: Option<Var>,
    gy: &[T],
) {
    let x = nodes[input.index()].value.data();
    let wv = nodes[weight.index()].value.data();
    let (out_f, in_f) = match *nodes[weight.index()].value.shape() {
        [o, i] => (o, i),
        _ => unreachable!("validated in forward"),
    };
    let n = x.len() / in_f;
    if let Some(b) = bias {
        if let Some(gb) = grad_slot(nodes, grads, b) {
            for row in gy.chunks(out_f) {
                for (d, &g) in gb.iter_mut().zip(row) {
                    *d += g;
                }
            }
        }
    }
    if let Some(gw) = grad_slot(nodes, grads, weight) {
        gemm(
            MatRef::new(gy, n, out_f).t(),
            MatRef::new(x, n, in_f),
            gw,
            true,
        );
    }
    if let Some(gx) = grad_slot(nodes, grads, input) {
        gemm(
            MatRef::new(gy, n, out_f),
            MatRef::new(wv, out_f, in_f),
            gx,
            true,
        );
    }
}

pub(super) fn backward_channel_scale<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    gate: Var,
    gy: &[T],
) {
    let xt = &nodes[input.index()].value;
    let (_, _, h, w) = xt.dims4().expect("validated");
    let hw = h * w;
    let x = xt.data();
    let s = nodes[gate.index()].value.data();
    if let Some(gs) = grad_slot(nodes, grads, gate) {
        for (plane, (g, xv)) in gy.chunks(hw).zip(x.chunks(hw)).enumerate() {
            gs[plane] += g.iter().zip(xv).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    if let Some(gx) = grad_slot(nodes, grads, input) {
        for (plane, (d, g)) in gx.chunks_mut(hw).zip(gy.chunks(hw)).enumerate() {
            for (dv, &gv) in d.iter_mut().zip(g) {
                *dv += gv * s[plane];
            }
        }
    }
}
